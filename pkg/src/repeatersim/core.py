"""Shared domain types: hardware parameters, chain geometry, entanglement records.

Simulation time is an integer count of picoseconds. Distances are converted
to ticks once, at setup, so event ordering never depends on float
accumulation.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Tuple

PS_PER_S = 10**12
INF = math.inf

# SimTime is a plain int of picoseconds; the alias documents intent.
SimTime = int


def seconds_to_ticks(seconds: float) -> SimTime:
    if math.isinf(seconds):
        raise ValueError("infinite duration has no tick representation")
    if seconds < 0:
        raise ValueError(f"negative duration: {seconds}")
    return round(seconds * PS_PER_S)


def ticks_to_seconds(ticks: SimTime) -> float:
    return ticks / PS_PER_S


def km_to_ticks(distance_km: float, v_km_per_s: float) -> SimTime:
    """Signal travel time over ``distance_km`` in picoseconds (round-half-even)."""
    if distance_km < 0:
        raise ValueError(f"negative distance: {distance_km}")
    return round(distance_km * PS_PER_S / v_km_per_s)


@dataclass(frozen=True)
class HardwareParams:
    """Efficiencies, fiber and memory parameters of the repeater hardware.

    ``e_b`` is the combined per-attempt heralding probability of the
    Barrett-Kok measurement, ``e_s`` the swap success probability, ``e_m``
    the memory emission efficiency and ``e_d`` the detector efficiency.
    """

    e_b: float = 0.5
    e_s: float = 0.5
    e_m: float = 0.9
    e_d: float = 0.8
    alpha_db_per_km: float = 0.2
    v_km_per_s: float = 2e5
    tau_mem_s: float = INF

    def __post_init__(self):
        for name in ("e_b", "e_s", "e_m", "e_d"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if not self.alpha_db_per_km >= 0.0:
            raise ValueError(f"alpha_db_per_km must be >= 0, got {self.alpha_db_per_km}")
        if not (self.v_km_per_s > 0.0 and math.isfinite(self.v_km_per_s)):
            raise ValueError(f"v_km_per_s must be positive and finite, got {self.v_km_per_s}")
        if not self.tau_mem_s > 0.0:
            raise ValueError(f"tau_mem_s must be positive or inf, got {self.tau_mem_s}")

    @property
    def tau_mem_ticks(self) -> Optional[SimTime]:
        """Memory lifetime in ticks, ``None`` when memories never expire."""
        if math.isinf(self.tau_mem_s):
            return None
        return seconds_to_ticks(self.tau_mem_s)

    def replace(self, **changes) -> "HardwareParams":
        values = {**self.__dict__, **changes}
        return HardwareParams(**values)


def gamma_per_km(params: HardwareParams) -> float:
    """Natural-log attenuation coefficient, so that exp(-gamma*L) == 10**(-alpha*L/10)."""
    return params.alpha_db_per_km * math.log(10.0) / 10.0


def c_node_for(num_repeaters: int) -> int:
    # middle of nodes 0..r+1, ties toward the lower index
    return (num_repeaters + 1) // 2


@dataclass(frozen=True)
class ChainTopology:
    """Linear chain of ``num_repeaters + 2`` equally spaced nodes.

    Node 0 and node ``r + 1`` are the end nodes; link ``i`` joins nodes
    ``i`` and ``i + 1`` and has its BSM station at the midpoint.
    """

    total_length_km: float
    num_repeaters: int
    c_node_index: int = -1

    def __post_init__(self):
        if not (self.total_length_km > 0 and math.isfinite(self.total_length_km)):
            raise ValueError(f"total_length_km must be positive, got {self.total_length_km}")
        if self.num_repeaters < 0 or int(self.num_repeaters) != self.num_repeaters:
            raise ValueError(f"num_repeaters must be a nonnegative integer, got {self.num_repeaters}")
        if self.c_node_index == -1:
            object.__setattr__(self, "c_node_index", c_node_for(self.num_repeaters))
        elif not 0 <= self.c_node_index <= self.num_repeaters + 1:
            raise ValueError(f"c_node_index {self.c_node_index} outside the chain")

    @property
    def num_nodes(self) -> int:
        return self.num_repeaters + 2

    @property
    def num_links(self) -> int:
        return self.num_repeaters + 1

    @property
    def link_length_km(self) -> float:
        return self.total_length_km / self.num_links

    def node_position_km(self, node: int) -> float:
        return node * self.link_length_km

    def bsm_position_km(self, link: int) -> float:
        return (link + 0.5) * self.link_length_km

    def link_nodes(self, link: int) -> Tuple[int, int]:
        return link, link + 1

    def hops_to_c_node(self, node: int) -> int:
        return abs(node - self.c_node_index)

    def link_notify_hops(self, link: int) -> int:
        """Hops from the link endpoint closer to the C-node."""
        left, right = self.link_nodes(link)
        return min(self.hops_to_c_node(left), self.hops_to_c_node(right))

    def max_hops_to_c_node(self) -> int:
        return max(self.c_node_index, self.num_nodes - 1 - self.c_node_index)


MemoryId = Tuple[int, int]  # (node index, slot); slot 0 faces left, 1 faces right


@dataclass(eq=False)
class EntanglementRecord:
    """Classical bookkeeping for one entangled pair of memories.

    ``created_at`` is the qubit-photon inception time of the oldest memory
    involved; ``expires_at`` is ``None`` for memories that never decay.
    ``constituents`` lists the elementary records a swapped record was
    built from (an elementary record lists itself).
    """

    memory_a: MemoryId
    memory_b: MemoryId
    created_at: SimTime
    expires_at: Optional[SimTime]
    span: Tuple[int, int]
    constituents: Tuple["EntanglementRecord", ...] = field(default=(), repr=False)

    def __post_init__(self):
        if not self.span[0] < self.span[1]:
            raise ValueError(f"span must be increasing, got {self.span}")
        if not self.constituents:
            self.constituents = (self,)

    def expired(self, now: SimTime) -> bool:
        return self.expires_at is not None and self.expires_at <= now

    @property
    def links(self) -> range:
        return range(self.span[0], self.span[1])


def min_expiry(*times: Optional[SimTime]) -> Optional[SimTime]:
    finite = [t for t in times if t is not None]
    return min(finite) if finite else None


@dataclass
class TrialStats:
    """Counters and timings collected over one simulation run."""

    end_to_end_successes: int = 0
    elapsed: SimTime = 0
    attempts_per_link: Counter = field(default_factory=Counter)
    oldest_memory_age_samples: list = field(default_factory=list)
    success_times: list = field(default_factory=list)
    rounds: int = 0
    expiry_failures: int = 0
    swap_failures: int = 0
    zero_reason: Optional[str] = None

    @property
    def rate_per_s(self) -> float:
        if self.elapsed <= 0:
            return 0.0
        return self.end_to_end_successes / ticks_to_seconds(self.elapsed)

    @property
    def total_attempts(self) -> int:
        return sum(self.attempts_per_link.values())

    @property
    def elapsed_s(self) -> float:
        return ticks_to_seconds(self.elapsed)

    def oldest_memory_ages_s(self) -> list:
        return [ticks_to_seconds(t) for t in self.oldest_memory_age_samples]

    def rate_stderr(self, batches: int = 20) -> float:
        """Standard error of the rate by batch means over inter-success times.

        Falls back to the Poisson estimate ``rate / sqrt(n)`` when there are
        fewer than two successes per batch.
        """
        n = self.end_to_end_successes
        if n == 0:
            return math.nan
        if n < 2 * batches:
            return self.rate_per_s / math.sqrt(n)
        times = self.success_times
        per = n // batches
        rates = []
        prev = 0
        for b in range(batches):
            end = times[(b + 1) * per - 1]
            rates.append(per / ticks_to_seconds(end - prev))
            prev = end
        mean = sum(rates) / batches
        var = sum((x - mean) ** 2 for x in rates) / (batches - 1)
        return math.sqrt(var / batches)
