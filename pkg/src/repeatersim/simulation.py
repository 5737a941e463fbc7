"""Chain construction, rate measurement and parameter sweeps."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, TextIO, Tuple

from . import analytics
from .core import INF, ChainTopology, HardwareParams, TrialStats, seconds_to_ticks
from .engine import Engine, LivelockError
from .protocols import INDEPENDENT, PROTOCOLS, SYNCHRONOUS, ChainProtocol, make_protocol

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def point_seed(master_seed: int, index: int) -> int:
    """64-bit seed for sweep point ``index``; independent of the other points."""
    return splitmix64(splitmix64(master_seed & MASK64) ^ (index & MASK64))


@dataclass(frozen=True)
class Stop:
    """Stop condition for one run; at least one bound must be set."""

    successes: Optional[int] = 10_000
    max_time_s: Optional[float] = 1_000.0
    max_rounds: Optional[int] = None

    def __post_init__(self):
        if self.successes is None and self.max_time_s is None and self.max_rounds is None:
            raise ValueError("stop condition must be bounded")
        if self.max_time_s is not None and not self.max_time_s > 0:
            raise ValueError("max_time_s must be positive")


def build_chain(total_length_km: float, r: int, params: HardwareParams, protocol: str = SYNCHRONOUS,
                engine: Optional[Engine] = None, seed: int = 0, **kwargs) -> Tuple[ChainTopology, ChainProtocol]:
    """Equal-spaced chain with ``r`` repeaters and its wired protocol instance."""
    if not total_length_km > 0:
        raise ValueError(f"total length must be positive, got {total_length_km}")
    chain = ChainTopology(total_length_km, r)
    engine = engine if engine is not None else Engine()
    return chain, make_protocol(protocol, chain, params, engine, seed=seed, **kwargs)


def measure_rate(
    total_length_km: float,
    r: int,
    params: HardwareParams,
    protocol: str = SYNCHRONOUS,
    stop: Stop = Stop(),
    seed: int = 0,
    trace: Optional[TextIO] = None,
    **kwargs,
) -> TrialStats:
    """Run one chain until ``stop`` and return its statistics.

    The rate is total successes over elapsed simulated time. A run with no
    successes gets ``zero_reason`` set to ``"memory-cutoff"`` when attempts
    were lost to expiry, else ``"insufficient-time"``.
    """
    engine = Engine(trace=trace)
    max_rounds = stop.max_rounds
    _, proto = build_chain(total_length_km, r, params, protocol, engine, seed,
                           max_rounds=max_rounds, **kwargs)
    proto.start()
    t_end = None if stop.max_time_s is None else seconds_to_ticks(stop.max_time_s)
    stats = engine.run_until(
        t_end=t_end,
        target_successes=stop.successes,
        stop=(lambda: proto.finished) if max_rounds is not None else None,
    )
    if stats.end_to_end_successes == 0:
        stats.zero_reason = "memory-cutoff" if stats.expiry_failures else "insufficient-time"
    return stats


def model_rate(params: HardwareParams, total_length_km: float, r: int, protocol: str, mu_seed: int = 0) -> float:
    """Analytical rate for the protocol, always with infinite memory lifetime."""
    ideal = params.replace(tau_mem_s=INF)
    if protocol == SYNCHRONOUS:
        return analytics.rate_synchronous(ideal, total_length_km, r)
    if protocol == INDEPENDENT:
        return analytics.rate_independent(ideal, total_length_km, r, "mc", seed=mu_seed)
    raise ValueError(f"unknown protocol {protocol!r}")


@dataclass(frozen=True)
class SweepSpec:
    lengths_km: Sequence[float]
    repeaters: Sequence[int]
    tau_mem_s: Sequence[float]
    protocol: str = SYNCHRONOUS
    stop: Stop = Stop()
    seed: int = 0
    params: HardwareParams = HardwareParams()

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        for name in ("lengths_km", "repeaters", "tau_mem_s"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def points(self) -> List[Tuple[float, int, float]]:
        """Grid points in output order: tau_mem, then r, then L."""
        return [(L, r, tau) for tau in self.tau_mem_s for r in self.repeaters for L in self.lengths_km]


@dataclass
class SweepPoint:
    L_km: float
    r: int
    tau_mem_s: float
    protocol: str
    rate_sim_per_s: float
    rate_sim_stderr: float
    rate_model_per_s: float
    rel_dev: float
    mean_dt_s: float
    successes: int
    seed: int
    error: Optional[str] = None


@dataclass
class SweepResult:
    points: List[SweepPoint] = field(default_factory=list)

    def __len__(self):
        return len(self.points)


def run_point(spec: SweepSpec, index: int) -> SweepPoint:
    L, r, tau = spec.points()[index]
    seed = point_seed(spec.seed, index)
    params = spec.params.replace(tau_mem_s=tau)
    try:
        model = model_rate(params, L, r, spec.protocol)
        stats = measure_rate(L, r, params, spec.protocol, spec.stop, seed)
    except (ValueError, LivelockError) as exc:
        log.warning("sweep point L=%s r=%s tau=%s failed: %s", L, r, tau, exc)
        nan = math.nan
        return SweepPoint(L, r, tau, spec.protocol, nan, nan, nan, nan, nan, 0, seed, str(exc))
    rate = stats.rate_per_s
    ages = stats.oldest_memory_ages_s()
    return SweepPoint(
        L_km=L,
        r=r,
        tau_mem_s=tau,
        protocol=spec.protocol,
        rate_sim_per_s=rate,
        rate_sim_stderr=stats.rate_stderr(),
        rate_model_per_s=model,
        rel_dev=(rate - model) / model if model > 0 else math.nan,
        mean_dt_s=sum(ages) / len(ages) if ages else math.nan,
        successes=stats.end_to_end_successes,
        seed=seed,
    )


def _run_point_args(args):
    return run_point(*args)


def run_sweep(spec: SweepSpec, threads: int = 1) -> SweepResult:
    """Run every grid point; results keep grid order whatever the worker count."""
    indices = range(len(spec.points()))
    if threads <= 1:
        return SweepResult([run_point(spec, i) for i in indices])
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return SweepResult(list(pool.map(_run_point_args, [(spec, i) for i in indices])))
