import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothcert.stats import (
    beta_quantile,
    binom_two_sided_pvalue,
    clopper_pearson_lower,
    inv_normal_cdf,
    normal_cdf,
    regularized_incomplete_beta,
)


def erf_phi_inverse(p: float, tol: float = 1e-14) -> float:
    """Independent oracle: bisect the erf-based CDF."""
    lo, hi = -40.0, 40.0
    while hi - lo > tol * max(1.0, abs(lo) + abs(hi)):
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def binomial_tail_lower_oracle(k: int, n: int, alpha: float) -> float:
    """Largest p with P[Bin(n, p) >= k] <= alpha, by direct pmf summation."""

    def tail_at_least(p: float) -> float:
        if p <= 0.0:
            return 0.0 if k > 0 else 1.0
        if p >= 1.0:
            return 1.0
        log_p, log_q = math.log(p), math.log(1.0 - p)
        total = 0.0
        for i in range(k, n + 1):
            log_pmf = (
                math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) + i * log_p + (n - i) * log_q
            )
            total += math.exp(log_pmf)
        return total

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if tail_at_least(mid) <= alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_inv_normal_cdf_center():
    assert inv_normal_cdf(0.5) == 0.0


def test_inv_normal_cdf_one_sigma():
    assert inv_normal_cdf(0.841344746) == pytest.approx(1.0, abs=1e-6)


def test_inv_normal_cdf_999():
    assert inv_normal_cdf(0.999) == pytest.approx(3.090232, abs=1e-5)


def test_inv_normal_cdf_roundtrip_tolerance():
    for p in np.linspace(1e-6, 1 - 1e-6, 2001):
        z = inv_normal_cdf(float(p))
        assert abs(normal_cdf(z) - p) < 1e-12


def test_inv_normal_cdf_matches_erf_oracle_grid():
    for p in np.arange(1, 1000) / 1000.0:
        assert abs(inv_normal_cdf(float(p)) - erf_phi_inverse(float(p))) < 1e-10


def test_inv_normal_cdf_extreme_tails_finite():
    for p in (1e-300, 1e-12, 1 - 1e-12):
        z = inv_normal_cdf(p)
        assert np.isfinite(z)
    assert inv_normal_cdf(1e-300) < -30
    with pytest.raises(ValueError):
        inv_normal_cdf(0.0)
    with pytest.raises(ValueError):
        inv_normal_cdf(1.0)


def test_incomplete_beta_closed_forms():
    # I_x(1, 1) = x; I_x(a, 1) = x^a; I_x(1, b) = 1 - (1-x)^b
    for x in (0.1, 0.37, 0.9):
        assert regularized_incomplete_beta(1, 1, x) == pytest.approx(x, abs=1e-14)
        assert regularized_incomplete_beta(3, 1, x) == pytest.approx(x**3, abs=1e-13)
        assert regularized_incomplete_beta(1, 4, x) == pytest.approx(1 - (1 - x) ** 4, abs=1e-13)
    assert regularized_incomplete_beta(2.5, 7.1, 0.0) == 0.0
    assert regularized_incomplete_beta(2.5, 7.1, 1.0) == 1.0


def test_beta_quantile_inverts_cdf():
    for a, b, q in [(3.0, 5.0, 0.1), (80.0, 21.0, 0.001), (1.0, 1.0, 0.42)]:
        x = beta_quantile(q, a, b)
        assert regularized_incomplete_beta(a, b, x) == pytest.approx(q, abs=1e-9)


def test_clopper_pearson_zero_successes():
    assert clopper_pearson_lower(0, 50, 0.001) == 0.0


def test_clopper_pearson_all_successes_closed_form():
    for n in (10, 100, 10_000):
        assert clopper_pearson_lower(n, n, 0.001) == pytest.approx(0.001 ** (1 / n), abs=1e-9)


def test_clopper_pearson_matches_binomial_tail_oracle():
    for k, n, alpha in [(80, 100, 0.001), (7, 10, 0.05), (930, 1000, 0.001), (55, 100, 0.01)]:
        ours = clopper_pearson_lower(k, n, alpha)
        oracle = binomial_tail_lower_oracle(k, n, alpha)
        assert ours == pytest.approx(oracle, abs=1e-9), (k, n, alpha)


def test_clopper_pearson_strictly_conservative():
    for n in (5, 40, 200):
        for k in range(1, n + 1):
            assert clopper_pearson_lower(k, n, 0.01) < k / n


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 300), k=st.integers(1, 300), alpha=st.sampled_from([0.001, 0.01, 0.05]))
def test_clopper_pearson_monotone_in_k(n, k, alpha):
    k = min(k, n - 1)
    lo = clopper_pearson_lower(k, n, alpha)
    hi = clopper_pearson_lower(k + 1, n, alpha)
    assert hi >= lo


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 300), k=st.integers(0, 300))
def test_clopper_pearson_monotone_in_alpha(n, k):
    k = min(k, n)
    assert clopper_pearson_lower(k, n, 0.01) >= clopper_pearson_lower(k, n, 0.001)


def test_clopper_pearson_validation():
    with pytest.raises(ValueError):
        clopper_pearson_lower(-1, 10, 0.01)
    with pytest.raises(ValueError):
        clopper_pearson_lower(11, 10, 0.01)
    with pytest.raises(ValueError):
        clopper_pearson_lower(5, 10, 0.0)


def test_coverage_simulation_small():
    # bound exceeds the true p in about alpha of trials, never much more
    p_true, n, alpha, trials = 0.7, 1000, 0.01, 2000
    rng = np.random.default_rng(0)
    ks = rng.binomial(n, p_true, size=trials)
    cache = {}
    violations = 0
    for k in ks:
        if k not in cache:
            cache[k] = clopper_pearson_lower(int(k), n, alpha)
        violations += cache[k] > p_true
    rate = violations / trials
    assert rate <= alpha + 3 * math.sqrt(alpha * (1 - alpha) / trials)


def test_binom_pvalue_even_split_is_one():
    assert binom_two_sided_pvalue(5, 10) == 1.0


def test_binom_pvalue_unanimous():
    assert binom_two_sided_pvalue(10, 10) == pytest.approx(2.0 ** (1 - 10), abs=1e-15)
    assert binom_two_sided_pvalue(0, 10) == pytest.approx(2.0 ** (1 - 10), abs=1e-15)


def test_binom_pvalue_symmetry():
    assert binom_two_sided_pvalue(3, 10) == pytest.approx(binom_two_sided_pvalue(7, 10), abs=1e-12)


def test_binom_pvalue_matches_direct_sum():
    # P[|X - 5| >= 3] for X ~ Bin(10, 1/2)
    pmf = [math.comb(10, i) / 2**10 for i in range(11)]
    expected = sum(pmf[:3]) + sum(pmf[8:])
    assert binom_two_sided_pvalue(8, 10) == pytest.approx(expected, abs=1e-12)
