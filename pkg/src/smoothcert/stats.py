"""Exact statistical kernels for certification.

Everything here is deliberately self-contained: the certified radius is only
as trustworthy as these routines, so the inverse normal CDF is a rational
approximation polished with a Newton step against an erfc-based CDF, and the
binomial confidence bound goes through a continued-fraction incomplete beta
with bisection to 1e-12.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "normal_cdf",
    "normal_pdf",
    "inv_normal_cdf",
    "log_beta",
    "regularized_incomplete_beta",
    "beta_quantile",
    "clopper_pearson_lower",
    "binom_two_sided_pvalue",
]


def normal_cdf(z: float) -> float:
    """Standard normal CDF via erfc; accurate in both tails."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def normal_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


# Acklam's rational approximation to the normal quantile (|rel err| < 1.2e-9).
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def inv_normal_cdf(p: float) -> float:
    """Inverse standard normal CDF.

    Rational approximation refined with one Newton step against the
    erfc-based CDF; the step is skipped deep in the tails where the normal
    density underflows and the approximation is already beyond float64
    discrimination.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must be in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        z = ((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            (((( _D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        z = ((((( _A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            ((((( _B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        z = -((((( _C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            (((( _D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    pdf = normal_pdf(z)
    if pdf > 0.0 and math.isfinite(pdf):
        z -= (normal_cdf(z) - p) / pdf
    return z


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    MAXIT, EPS, FPMIN = 2000, 1e-15, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return h
    raise RuntimeError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the CDF of Beta(a, b) at x."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - log_beta(a, b))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - math.exp(b * math.log1p(-x) + a * math.log(x) - log_beta(b, a)) * _betacf(b, a, 1.0 - x) / b


def beta_quantile(q: float, a: float, b: float, tol: float = 1e-12) -> float:
    """Quantile of Beta(a, b) by bisection on the regularized incomplete beta."""
    if not (0.0 < q < 1.0):
        raise ValueError("q must be in (0, 1)")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if regularized_incomplete_beta(a, b, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson_lower(k: int, n: int, alpha: float) -> float:
    """One-sided exact lower confidence bound on a binomial proportion.

    For k successes out of n, the bound is the alpha quantile of
    Beta(k, n - k + 1); k = 0 maps to 0. The true proportion is below the
    bound with probability at most alpha.
    """
    if n < 1 or not (0 <= k <= n):
        raise ValueError(f"invalid counts k={k}, n={n}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if k == 0:
        return 0.0
    return beta_quantile(alpha, float(k), float(n - k + 1))


def binom_two_sided_pvalue(k: int, n: int) -> float:
    """Exact two-sided binomial test p-value against p = 1/2.

    Tail mass of Binomial(n, 1/2) at least as extreme as k on either side;
    symmetry makes it 2 * P[X >= max(k, n-k)], capped at 1.
    """
    if n < 1 or not (0 <= k <= n):
        raise ValueError(f"invalid counts k={k}, n={n}")
    m = max(k, n - k)
    # pmf at m, then ratio recursion across the tail
    log_pmf = math.lgamma(n + 1) - math.lgamma(m + 1) - math.lgamma(n - m + 1) - n * math.log(2.0)
    pmf_m = math.exp(log_pmf)
    if m == n:
        tail = pmf_m
    else:
        i = np.arange(m, n, dtype=np.float64)
        ratios = (n - i) / (i + 1.0)
        tail = pmf_m * (1.0 + np.cumprod(ratios).sum())
    return min(1.0, 2.0 * tail)
