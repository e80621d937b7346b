"""Tail probabilities used by the asymptotic tests.

The chi-square survival function is evaluated through the regularized
incomplete gamma function, using the power series below ``a + 1`` and a
modified-Lentz continued fraction above it.
"""

import math

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _lower_series(a, x):
    # P(a, x) by the series x^a e^-x / Gamma(a+1) * sum x^n / (a+1)...(a+n)
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    log_prefix = -x + a * math.log(x) - math.lgamma(a)
    return total * math.exp(log_prefix)


def _upper_cf(a, x):
    # Q(a, x) by Lentz's method on the Legendre continued fraction
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
    log_prefix = -x + a * math.log(x) - math.lgamma(a)
    return h * math.exp(log_prefix)


def gammaincc(a, x):
    """Regularized upper incomplete gamma function ``Q(a, x)``."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_series(a, x))
    return min(1.0, _upper_cf(a, x))


def gammainc(a, x):
    """Regularized lower incomplete gamma function ``P(a, x)``."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _lower_series(a, x))
    return max(0.0, 1.0 - _upper_cf(a, x))


def chi2_sf(statistic, df):
    """Upper-tail probability of a chi-square variate with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if statistic <= 0:
        return 1.0
    return gammaincc(0.5 * df, 0.5 * statistic)


def normal_two_sided_p(z):
    """Two-sided p-value of a standard normal statistic."""
    return math.erfc(abs(z) / math.sqrt(2.0))
