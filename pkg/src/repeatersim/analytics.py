"""Closed-form entanglement rate models and the max-of-geometric estimator.

All rate functions take a :class:`HardwareParams` and a total end-to-end
length in km and return entanglements per second. Except for the
single-link cutoff in :func:`rate_no_repeater`, the models ignore the
memory lifetime.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .core import HardwareParams, gamma_per_km

MU_SQRT_VALID_MAX_N = 8
DEFAULT_MU_REPETITIONS = 10**6


@dataclass(frozen=True)
class MuEstimate:
    """Monte Carlo estimate of E[max of n geometric attempt counts] * p1."""

    n: int
    mean_normalized: float
    stddev_normalized: float
    repetitions: int


def p_single(params: HardwareParams, link_length_km: float) -> float:
    """Per-attempt heralding probability of one elementary link."""
    if link_length_km < 0:
        raise ValueError(f"link_length_km must be >= 0, got {link_length_km}")
    loss = math.exp(-gamma_per_km(params) * link_length_km)
    return params.e_b * params.e_m**2 * params.e_d**2 * loss


def _check_p1(p1: float) -> None:
    if not 0.0 < p1 <= 1.0:
        raise ValueError(f"p1 must lie in (0, 1], got {p1}")


def geometric_pmf(p1: float, k: int) -> float:
    _check_p1(p1)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return (1.0 - p1) ** (k - 1) * p1


def geometric_mean_std(p1: float) -> Tuple[float, float]:
    _check_p1(p1)
    mean = 1.0 / p1
    return mean, math.sqrt(max(mean * mean - mean, 0.0))


def sample_geometric(rng: np.random.Generator, p1: float, size=None):
    """Attempts until first success, by inverse CDF: ceil(ln U / ln(1 - p1)).

    Returns an int for ``size=None`` and an int64 array otherwise.
    """
    _check_p1(p1)
    if p1 >= 1.0:
        return 1 if size is None else np.ones(size, dtype=np.int64)
    # 1 - random() lies in (0, 1], keeping the log finite
    u = 1.0 - rng.random(size)
    k = np.ceil(np.log(u) / math.log1p(-p1))
    k = np.maximum(k, 1)
    if size is None:
        return int(k)
    return k.astype(np.int64)


def rate_no_repeater(params: HardwareParams, total_length_km: float) -> float:
    """Single-link rate with a 4L/v attempt cycle and a hard lifetime cutoff."""
    if not total_length_km > 0:
        raise ValueError(f"total_length_km must be > 0, got {total_length_km}")
    if total_length_km >= 2.0 * params.v_km_per_s * params.tau_mem_s:
        return 0.0
    return params.v_km_per_s / (4.0 * total_length_km) * p_single(params, total_length_km)


def rate_synchronous(params: HardwareParams, total_length_km: float, r: int) -> float:
    """Rate when all r + 1 links are attempted together and any failure restarts."""
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    if not total_length_km > 0:
        raise ValueError(f"total_length_km must be > 0, got {total_length_km}")
    links = r + 1
    cycle = 3.0 / links + 1.0
    gain = (
        params.e_b**links
        * params.e_s**r
        * (params.e_m * params.e_d) ** (2 * links)
        * math.exp(-gamma_per_km(params) * total_length_km)
    )
    return params.v_km_per_s / total_length_km / cycle * gain


def estimate_mu(
    n: int,
    p1: float,
    repetitions: int = DEFAULT_MU_REPETITIONS,
    seed: Optional[int] = 0,
    chunk: int = 200_000,
) -> MuEstimate:
    """Mean and standard deviation of max(k_1..k_n) normalized by 1/p1.

    The k_i are independent geometric attempt counts. Draws are made in
    row-major chunks from one generator, so the result depends only on
    ``seed`` and ``repetitions``, not on ``chunk``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    _check_p1(p1)
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < repetitions:
        m = min(chunk, repetitions - done)
        maxima = sample_geometric(rng, p1, (m, n)).max(axis=1).astype(np.float64)
        total += float(maxima.sum())
        total_sq += float(np.square(maxima).sum())
        done += m
    mean = total / repetitions
    var = max(total_sq / repetitions - mean * mean, 0.0)
    if repetitions > 1:
        var *= repetitions / (repetitions - 1)
    return MuEstimate(n, mean * p1, math.sqrt(var) * p1, repetitions)


def mu_sqrt_approx(n: int) -> float:
    """sqrt(n); a good fit to the normalized maximum only for n <= 8."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return math.sqrt(n)


def link_p1(params: HardwareParams, total_length_km: float, r: int) -> float:
    return p_single(params, total_length_km / (r + 1))


def rate_independent(
    params: HardwareParams,
    total_length_km: float,
    r: int,
    mu_source: Union[str, float] = "mc",
    *,
    repetitions: int = 200_000,
    seed: Optional[int] = 0,
    mu_p1: Optional[float] = None,
) -> float:
    """Rate when links retry independently and wait for the slowest one.

    ``mu_source`` is ``"mc"`` (Monte Carlo estimate at the link's own
    success probability, or at ``mu_p1`` if given), ``"sqrt"``, or a
    precomputed normalized mean.
    """
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    if not total_length_km > 0:
        raise ValueError(f"total_length_km must be > 0, got {total_length_km}")
    links = r + 1
    p1 = link_p1(params, total_length_km, r)
    if p1 == 0.0:
        return 0.0
    if mu_source == "mc":
        mu = estimate_mu(links, mu_p1 if mu_p1 is not None else p1, repetitions, seed).mean_normalized
    elif mu_source == "sqrt":
        mu = mu_sqrt_approx(links)
    elif isinstance(mu_source, (int, float)) and not isinstance(mu_source, bool):
        mu = float(mu_source)
    else:
        raise ValueError(f"unknown mu_source {mu_source!r}")
    return links / (3.0 * mu) * params.v_km_per_s / total_length_km * params.e_s**r * p1


def oldest_memory_age(params: HardwareParams, total_length_km: float, r: int, rate_ind: Optional[float] = None, **kwargs) -> float:
    """Mean age of the oldest memory at end-to-end success, in seconds.

    ``rate_ind`` defaults to :func:`rate_independent` with ``kwargs``.
    """
    if rate_ind is None:
        rate_ind = rate_independent(params, total_length_km, r, **kwargs)
    if not rate_ind > 0:
        raise ValueError("independent rate must be positive")
    return 1.0 / rate_ind + total_length_km / params.v_km_per_s * math.log2(r + 1)
