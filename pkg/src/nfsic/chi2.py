"""Chi-squared distribution via the regularized incomplete gamma function.

P(a, x) is evaluated by its power series for x < a + 1 and Q(a, x) by a
Lentz continued fraction otherwise, each to near machine precision.
"""
from __future__ import annotations

import math

from nfsic.errors import InputError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz method.
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise InputError(f"shape must be positive, got {a}")
    if x < 0:
        raise InputError(f"x must be nonnegative, got {x}")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return min(_gamma_series(a, x), 1.0)
    return max(1.0 - _gamma_cf(a, x), 0.0)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise InputError(f"shape must be positive, got {a}")
    if x < 0:
        raise InputError(f"x must be nonnegative, got {x}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return max(1.0 - _gamma_series(a, x), 0.0)
    return min(_gamma_cf(a, x), 1.0)


def _check_dof(J) -> float:
    if J <= 0 or not math.isfinite(J):
        raise InputError(f"degrees of freedom must be positive, got {J}")
    return float(J)


def chi2_cdf(J, x: float) -> float:
    J = _check_dof(J)
    if x < 0 or math.isnan(x):
        raise InputError(f"x must be nonnegative, got {x}")
    if math.isinf(x):
        return 1.0
    return gammainc_lower(0.5 * J, 0.5 * x)


def chi2_sf(J, x: float) -> float:
    """P(chi2(J) >= x)."""
    J = _check_dof(J)
    if x < 0 or math.isnan(x):
        raise InputError(f"x must be nonnegative, got {x}")
    if math.isinf(x):
        return 0.0
    return gammainc_upper(0.5 * J, 0.5 * x)


def _logpdf(J: float, x: float) -> float:
    a = 0.5 * J
    return (a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - math.lgamma(a)


def chi2_quantile(J, prob: float) -> float:
    """The `prob`-quantile of chi2(J).

    Safeguarded Newton iteration on the CDF (or survival function in the
    upper tail) inside a shrinking bisection bracket.
    """
    J = _check_dof(J)
    if not (0.0 < prob < 1.0):
        raise InputError(f"prob must lie in (0, 1), got {prob}")
    upper_tail = prob > 0.5
    target = 1.0 - prob if upper_tail else prob

    def resid(x: float) -> float:
        # increasing in x in both branches
        if upper_tail:
            return target - chi2_sf(J, x)
        return chi2_cdf(J, x) - target

    lo, hi = 0.0, max(J, 1.0)
    while resid(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
    # Wilson-Hilferty start, clipped into the bracket
    z = _normal_quantile(prob)
    h = 2.0 / (9.0 * J)
    x = J * max(1.0 - h + z * math.sqrt(h), 1e-3) ** 3
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    for _ in range(200):
        r = resid(x)
        if r == 0.0:
            return x
        if r < 0.0:
            lo = x
        else:
            hi = x
        try:
            step = r / math.exp(_logpdf(J, x))
        except (OverflowError, ValueError, ZeroDivisionError):
            step = math.inf
        x_new = x - step
        if not (lo < x_new < hi) or not math.isfinite(x_new):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * abs(x_new) or hi - lo <= 1e-15 * hi:
            return x_new
        x = x_new
    return x


def _normal_quantile(p: float) -> float:
    # Acklam's rational approximation; only used as a starting point.
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00)
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    if p > 1.0 - 0.02425:
        return -_normal_quantile(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
