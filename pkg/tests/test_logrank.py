from hypothesis import given, strategies as st
import numpy as np
import pytest
from statsmodels.duration.survfunc import survdiff

from bacsurv.survival import UndefinedStatisticError, logrank_test


def brute_force_two_group(t, e, g):
    """(O - E)^2 / V for group 0, looping over event times."""
    t, e, g = map(np.asarray, (t, e, g))
    o = ex = v = 0.0
    for time in np.unique(t[e.astype(bool)]):
        at_risk = t >= time
        n, n1 = at_risk.sum(), (at_risk & (g == 0)).sum()
        d = ((t == time) & e.astype(bool)).sum()
        d1 = ((t == time) & e.astype(bool) & (g == 0)).sum()
        o += d1
        ex += d * n1 / n
        if n > 1:
            v += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    return (o - ex) ** 2 / v if v > 0 else float("nan")


def test_identical_groups():
    r = logrank_test([1, 2, 3, 1, 2, 3], [1, 0, 1, 1, 0, 1], ["a"] * 3 + ["b"] * 3)
    assert r.statistic == pytest.approx(0.0, abs=1e-15)
    assert r.p_value == pytest.approx(1.0)
    assert r.degrees_of_freedom == 1


def test_four_subject_example():
    t, e, g = [1, 2, 3, 4], [1, 1, 1, 1], [0, 0, 1, 1]
    # hand: E_A = 2/4 + 1/3, V = 1/4 + 2/9; stat = (2 - 5/6)^2 / (17/36) = 49/17
    assert brute_force_two_group(t, e, g) == pytest.approx(49 / 17, rel=1e-14)
    assert logrank_test(t, e, g).statistic == pytest.approx(49 / 17, rel=1e-12)


def test_zero_events():
    with pytest.raises(UndefinedStatisticError):
        logrank_test([1, 2, 3], [0, 0, 0], [0, 1, 1])


def test_one_group():
    with pytest.raises(ValueError):
        logrank_test([1, 2], [1, 1], [0, 0])


def test_matches_statsmodels_k_sample(rng):
    t = rng.integers(1, 40, size=400).astype(float)
    e = rng.uniform(size=400) < 0.7
    g = rng.integers(0, 4, size=400)
    t[g == 3] += 5  # some real separation
    ours = logrank_test(t, e, g)
    stat, p = survdiff(t, e.astype(int), g)
    assert ours.statistic == pytest.approx(stat, rel=1e-10)
    assert ours.p_value == pytest.approx(p, rel=1e-8)
    assert ours.degrees_of_freedom == 3


groups2 = st.lists(st.tuples(st.integers(1, 15), st.booleans(), st.integers(0, 1)), min_size=2, max_size=30)


@given(data=groups2)
def test_two_group_square_and_label_swap(data):
    t = [d[0] for d in data]
    e = [d[1] for d in data]
    g = [d[2] for d in data]
    if len(set(g)) < 2 or not any(e):
        return
    r = logrank_test(t, e, g)
    swapped = logrank_test(t, e, [1 - x for x in g])
    assert swapped.statistic == pytest.approx(r.statistic, rel=1e-9, abs=1e-12)
    bf = brute_force_two_group(t, e, g)
    if np.isfinite(bf):
        assert r.statistic == pytest.approx(bf, rel=1e-9, abs=1e-12)
    assert r.statistic >= 0 and 0 <= r.p_value <= 1
