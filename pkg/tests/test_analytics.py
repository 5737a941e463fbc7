"""Closed-form models checked against hand arithmetic and independent oracles."""
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from repeatersim import analytics as an
from repeatersim.core import INF, HardwareParams

FIG1 = HardwareParams(e_b=0.5, e_s=0.5, e_m=0.9, e_d=0.8, alpha_db_per_km=0.2, v_km_per_s=2e5)


def exact_mu(n, p1, tol=1e-15):
    """E[max of n geometric(p1)] * p1 from the tail sum: sum_k P(max > k)."""
    q = 1.0 - p1
    total, k = 0.0, 0
    while True:
        term = 1.0 - (1.0 - q**k) ** n
        total += term
        if term < tol and k > 0:
            return total * p1
        k += 1


# --- single link probability -------------------------------------------------

def test_p_single_no_loss():
    assert an.p_single(FIG1, 0.0) == pytest.approx(0.2592, rel=1e-12)


def test_p_single_fifty_km():
    assert an.p_single(FIG1, 50.0) == pytest.approx(0.02592, rel=1e-12)


def test_p_single_zero_memory_efficiency():
    assert an.p_single(FIG1.replace(e_m=0.0), 10.0) == 0.0


def test_p_single_rejects_negative_length():
    with pytest.raises(ValueError):
        an.p_single(FIG1, -1.0)


# --- geometric distribution --------------------------------------------------

def test_geometric_pmf_values():
    assert an.geometric_pmf(1.0, 1) == 1.0
    assert an.geometric_pmf(0.5, 3) == pytest.approx(0.125)


def test_geometric_partial_sum():
    total = sum(an.geometric_pmf(0.1, k) for k in range(1, 201))
    assert total == pytest.approx(1 - 0.9**200, rel=1e-12)


def test_geometric_pmf_rejects_zero():
    with pytest.raises(ValueError):
        an.geometric_pmf(0.0, 1)


def test_geometric_mean_std():
    assert an.geometric_mean_std(1.0) == (1.0, 0.0)
    mean, _ = an.geometric_mean_std(0.02592)
    assert mean == pytest.approx(38.58024691, rel=1e-9)
    mean, std = an.geometric_mean_std(1e-3)
    assert std == pytest.approx(999.4998749, rel=1e-9)
    assert std / mean == pytest.approx(1.0, rel=1e-3)


@pytest.mark.parametrize("p1", [0.5, 0.1, 1e-3])
def test_sampler_mean_within_three_standard_errors(p1):
    rng = np.random.default_rng(12345)
    draws = an.sample_geometric(rng, p1, 10**5)
    mean, std = an.geometric_mean_std(p1)
    assert abs(draws.mean() - mean) < 3 * std / math.sqrt(draws.size)
    assert draws.min() >= 1


def test_sampler_pmf_matches_brute_force_counts():
    # brute force: Bernoulli trials until first success
    rng = random.Random(7)
    p1 = 0.3
    brute = []
    for _ in range(20000):
        k = 1
        while rng.random() >= p1:
            k += 1
        brute.append(k)
    fast = an.sample_geometric(np.random.default_rng(7), p1, 20000)
    for k in range(1, 6):
        expected = an.geometric_pmf(p1, k)
        assert np.mean(fast == k) == pytest.approx(expected, abs=0.015)
        assert np.mean(np.array(brute) == k) == pytest.approx(expected, abs=0.015)


def test_sampler_certain_success():
    assert an.sample_geometric(np.random.default_rng(0), 1.0) == 1


# --- rate models -------------------------------------------------------------

def test_no_repeater_fig1_point():
    assert an.rate_no_repeater(FIG1, 50.0) == pytest.approx(25.92, rel=1e-12)


def test_no_repeater_cutoff():
    p = FIG1.replace(tau_mem_s=1e-3)
    assert an.rate_no_repeater(p, 400.0) == 0.0
    assert an.rate_no_repeater(p, 399.0) > 0.0


def test_no_repeater_infinite_lifetime_decreasing():
    lengths = np.linspace(0.5, 1000, 200)
    rates = [an.rate_no_repeater(FIG1, L) for L in lengths]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def test_synchronous_r1_fifty_km():
    # 4000/s * 0.4 * 0.5^2 * 0.5 * 0.72^4 * 0.1, evaluated term by term
    expected = (2e5 / 50) * (1 / (3 / 2 + 1)) * 0.5**2 * 0.5 * 0.72**4 * 0.1
    assert expected == pytest.approx(5.37477120, rel=1e-8)
    assert an.rate_synchronous(FIG1, 50.0, 1) == pytest.approx(expected, rel=1e-12)


def test_synchronous_zero_swap_probability():
    assert an.rate_synchronous(FIG1.replace(e_s=0.0), 50.0, 2) == 0.0


def test_synchronous_r0_equals_no_repeater_random_draws():
    rng = random.Random(2024)
    for _ in range(100):
        p = HardwareParams(
            e_b=rng.uniform(0.01, 1), e_s=rng.uniform(0, 1), e_m=rng.uniform(0.01, 1),
            e_d=rng.uniform(0.01, 1), alpha_db_per_km=rng.uniform(0, 1),
            v_km_per_s=rng.uniform(1e4, 3e5),
        )
        L = 10 ** rng.uniform(-1, 3)
        assert an.rate_synchronous(p, L, 0) == pytest.approx(an.rate_no_repeater(p, L), rel=1e-12)


@pytest.mark.parametrize("fn", [
    lambda p, L, r: an.rate_synchronous(p, L, r),
    lambda p, L, r: an.rate_independent(p, L, r, mu_source=2.0),
])
@given(L=st.floats(1, 500), r=st.integers(0, 7))
@settings(max_examples=40, deadline=None)
def test_rates_linear_in_velocity(fn, L, r):
    slow = fn(FIG1, L, r)
    fast = fn(FIG1.replace(v_km_per_s=4e5), L, r)
    assert fast == pytest.approx(2 * slow, rel=1e-12)


@pytest.mark.parametrize("r", [0, 1, 3, 7])
def test_rates_decreasing_in_length(r):
    lengths = np.geomspace(1, 500, 60)
    sync = [an.rate_synchronous(FIG1, L, r) for L in lengths]
    ind = [an.rate_independent(FIG1, L, r, mu_source="sqrt") for L in lengths]
    assert all(a > b for a, b in zip(sync, sync[1:]))
    assert all(a > b for a, b in zip(ind, ind[1:]))


def test_independent_r0_is_three_not_four():
    L = 50.0
    expected = 2e5 / (3 * L) * an.p_single(FIG1, L)
    assert an.rate_independent(FIG1, L, 0, mu_source=1.0) == pytest.approx(expected, rel=1e-12)
    assert an.rate_independent(FIG1, L, 0, mu_source=1.0) / an.rate_no_repeater(FIG1, L) == pytest.approx(4 / 3)


def test_independent_attenuation_per_link():
    # r = 3 over 200 km: each 50 km link carries a 0.1 loss factor
    p = FIG1.replace(e_s=1.0)
    rate = an.rate_independent(p, 200.0, 3, mu_source=2.0)
    expected = 4 / (3 * 2.0) * (2e5 / 200) * 0.5 * 0.81 * 0.64 * 0.1
    assert rate == pytest.approx(expected, rel=1e-12)


def test_independent_large_r_limit():
    # with perfect swaps the loss factor tends to one and the prefactor
    # (r + 1) / (3 mu) keeps growing, so the rate rises without a maximum
    p = FIG1.replace(e_s=1.0)
    rates = [an.rate_independent(p, 500.0, r, mu_source="sqrt") for r in range(0, 2000)]
    assert all(a < b for a, b in zip(rates, rates[1:]))
    scaled = [rates[r] / math.sqrt(r + 1) for r in (999, 1999)]
    limit = 2e5 / 500 / 3 * an.p_single(p, 0.0)
    assert scaled[1] == pytest.approx(limit, rel=0.02)
    assert abs(scaled[1] - limit) < abs(scaled[0] - limit)


def test_independent_rejects_unknown_mu_source():
    with pytest.raises(ValueError):
        an.rate_independent(FIG1, 50.0, 1, mu_source="exact")


# --- max of geometric counts -------------------------------------------------

def test_exact_mu_oracle_known_values():
    # continuous limit is the harmonic number
    assert exact_mu(1, 1e-4) == pytest.approx(1.0, abs=1e-3)
    assert exact_mu(2, 1e-4) == pytest.approx(1.5, abs=1e-3)
    assert exact_mu(4, 1e-4) == pytest.approx(25 / 12, abs=1e-3)


def test_estimate_mu_single_sample_is_one():
    est = an.estimate_mu(1, 1e-3, 10**5, seed=3)
    assert abs(est.mean_normalized - 1.0) < 3 * est.stddev_normalized / math.sqrt(est.repetitions)


@pytest.mark.parametrize("n,p1", [(2, 1e-3), (4, 1e-3), (8, 1e-3), (4, 0.15)])
def test_estimate_mu_matches_tail_sum(n, p1):
    est = an.estimate_mu(n, p1, 2 * 10**5, seed=11)
    se = est.stddev_normalized / math.sqrt(est.repetitions)
    assert abs(est.mean_normalized - exact_mu(n, p1)) < 4 * se


def test_estimate_mu_sqrt_law_small_n():
    assert an.estimate_mu(4, 1e-3, 10**5, seed=1).mean_normalized == pytest.approx(2.0, rel=0.1)
    assert an.estimate_mu(8, 1e-3, 10**5, seed=1).mean_normalized == pytest.approx(math.sqrt(8), rel=0.1)


def test_estimate_mu_independent_of_small_p1():
    a = an.estimate_mu(4, 1e-3, 10**5, seed=5).mean_normalized
    b = an.estimate_mu(4, 1e-4, 10**5, seed=6).mean_normalized
    assert a == pytest.approx(b, rel=0.02)


def test_estimate_mu_reproducible_and_chunk_independent():
    a = an.estimate_mu(5, 1e-3, 50_000, seed=9)
    b = an.estimate_mu(5, 1e-3, 50_000, seed=9)
    c = an.estimate_mu(5, 1e-3, 50_000, seed=9, chunk=7_000)
    assert a == b
    assert a.mean_normalized == pytest.approx(c.mean_normalized, rel=1e-12)


def test_estimate_mu_rejects_zero_repetitions():
    with pytest.raises(ValueError):
        an.estimate_mu(2, 1e-3, 0)


def test_mu_sqrt_approx():
    assert an.mu_sqrt_approx(1) == 1.0
    assert an.mu_sqrt_approx(4) == 2.0
    assert an.mu_sqrt_approx(9) == 3.0


# --- oldest memory age -------------------------------------------------------

def test_oldest_memory_age_substitution():
    p = FIG1.replace(v_km_per_s=2e5)
    assert an.oldest_memory_age(p, 100.0, 1, rate_ind=10.0) == pytest.approx(0.1005, rel=1e-12)


def test_oldest_memory_age_no_repeater():
    assert an.oldest_memory_age(FIG1, 100.0, 0, rate_ind=10.0) == 0.1


@given(L=st.floats(1, 500), r=st.integers(1, 15), rate=st.floats(1e-3, 1e4))
def test_oldest_memory_age_exceeds_inverse_rate(L, r, rate):
    assert an.oldest_memory_age(FIG1, L, r, rate_ind=rate) > 1.0 / rate


def test_models_ignore_lifetime_except_cutoff():
    finite = FIG1.replace(tau_mem_s=1e-6)
    assert an.rate_synchronous(finite, 50, 3) == an.rate_synchronous(FIG1.replace(tau_mem_s=INF), 50, 3)
