"""Asymptotic comparison tests used for the baseline characteristics table."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import stats as sps

from ._special import chi2_sf


@dataclass(frozen=True)
class TestResult:
    statistic: float
    degrees_of_freedom: object
    p_value: float

    __test__ = False  # not a pytest class


def _as_samples(groups):
    samples = [np.asarray(g, dtype=float) for g in groups]
    for s in samples:
        if s.ndim != 1:
            raise ValueError("each group must be one-dimensional")
    return samples


def chi_square(table):
    """Pearson chi-square test of independence on an r x c table (no continuity correction)."""
    counts = np.asarray(table, dtype=float)
    if counts.ndim != 2 or counts.shape[0] < 2 or counts.shape[1] < 2:
        raise ValueError("contingency table must be at least 2x2")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise ValueError("every row and column marginal must be positive")
    expected = np.outer(rows, cols) / counts.sum()
    stat = float(((counts - expected) ** 2 / expected).sum())
    df = (counts.shape[0] - 1) * (counts.shape[1] - 1)
    return TestResult(stat, df, chi2_sf(stat, df))


def welch_t(sample_a, sample_b):
    """Unequal-variance t-test with Satterthwaite degrees of freedom.

    The statistic is ``mean(a) - mean(b)`` over its standard error, so
    swapping the samples flips its sign.
    """
    a, b = _as_samples([sample_a, sample_b])
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 observations")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    if va == 0 and vb == 0:
        raise ValueError("both samples have zero variance; Welch statistic undefined")
    stat = float((a.mean() - b.mean()) / math.sqrt(va + vb))
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = float(2.0 * sps.t.sf(abs(stat), df))
    return TestResult(stat, float(df), min(p, 1.0))


def one_way_anova(groups):
    """One-way ANOVA F test across ``k`` samples."""
    samples = _as_samples(groups)
    k = len(samples)
    if k < 2:
        raise ValueError("ANOVA needs at least 2 groups")
    if any(s.size == 0 for s in samples):
        raise ValueError("empty group")
    n = sum(s.size for s in samples)
    if n <= k:
        raise ValueError("ANOVA needs more observations than groups")
    grand = np.concatenate(samples).mean()
    ss_between = sum(s.size * (s.mean() - grand) ** 2 for s in samples)
    ss_within = sum(((s - s.mean()) ** 2).sum() for s in samples)
    df1, df2 = k - 1, n - k
    if ss_within == 0:
        if ss_between == 0:
            raise ValueError("zero within- and between-group variance; F undefined")
        return TestResult(math.inf, (df1, df2), 0.0)
    f = float((ss_between / df1) / (ss_within / df2))
    return TestResult(f, (df1, df2), float(sps.f.sf(f, df1, df2)))


def _midranks(values):
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size)
    # runs of equal values share the average of their positions
    starts = np.flatnonzero(np.concatenate([[True], sorted_vals[1:] != sorted_vals[:-1]]))
    ends = np.concatenate([starts[1:], [values.size]])
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks, ends - starts


def kruskal_wallis(groups, tie_correction=True):
    """Kruskal-Wallis H test with the usual tie correction.

    All-identical data give ``H = 0`` and ``p = 1``.
    """
    samples = _as_samples(groups)
    k = len(samples)
    if k < 2:
        raise ValueError("Kruskal-Wallis needs at least 2 groups")
    if any(s.size == 0 for s in samples):
        raise ValueError("empty group")
    pooled = np.concatenate(samples)
    n = pooled.size
    ranks, tie_sizes = _midranks(pooled)
    bounds = np.cumsum([0] + [s.size for s in samples])
    h = 12.0 / (n * (n + 1)) * sum(
        ranks[bounds[i] : bounds[i + 1]].sum() ** 2 / samples[i].size for i in range(k)
    ) - 3.0 * (n + 1)
    if tie_correction:
        divisor = 1.0 - (tie_sizes**3 - tie_sizes).sum() / (n**3 - n)
        if divisor <= 0:
            return TestResult(0.0, k - 1, 1.0)
        h /= divisor
    h = max(float(h), 0.0)
    return TestResult(h, k - 1, chi2_sf(h, k - 1))
