from dataclasses import replace
import math
from pathlib import Path

from hypothesis import given, strategies as st
import numpy as np
import pandas as pd
import pytest

from bacsurv.ascvd import (
    AscvdInputs,
    AscvdRangeError,
    RiskCategory,
    ascvd_score,
    assess,
    categorize_risk,
    compare_with_oracle,
    load_coefficients,
    read_oracle_profiles,
    score_frame,
)

ORACLE = Path(__file__).parent / "data" / "ascvd_oracle.csv"


def profile(**kw):
    base = dict(age=60, sex="female", race_group="white_or_other", total_cholesterol=213, hdl=50,
                systolic_bp=120, bp_treated=False, smoker=False, diabetic=False)
    base.update(kw)
    return AscvdInputs(**base)


def test_published_worked_examples():
    with open(ORACLE, newline="") as fh:
        rows = read_oracle_profiles(fh)
    assert len(rows) == 4
    for inputs, pct, extra in rows:
        # published values are rounded to 0.1 percentage points
        assert 100 * ascvd_score(inputs) == pytest.approx(pct, abs=0.1), extra["source"]
    summary = compare_with_oracle(rows)
    assert summary["pearson_r"] > 0.99


def test_smoker_higher():
    assert ascvd_score(profile(smoker=True)) > ascvd_score(profile())


@pytest.mark.parametrize("field,value", [("age", 39), ("age", 80), ("hdl", 101), ("systolic_bp", 89), ("total_cholesterol", 321)])
def test_range_error_names_field(field, value):
    with pytest.raises(AscvdRangeError) as info:
        ascvd_score(profile(**{field: value}))
    assert info.value.field == field


def test_unknown_race_group():
    with pytest.raises(ValueError):
        ascvd_score(profile(race_group="asian"))


@pytest.mark.parametrize(
    "risk,cat",
    [(0.04, RiskCategory.Low), (0.075, RiskCategory.Intermediate), (0.20, RiskCategory.High),
     (0.05, RiskCategory.Borderline), (0.0749999, RiskCategory.Borderline), (1.0, RiskCategory.High)],
)
def test_categories(risk, cat):
    assert categorize_risk(risk) is cat


def test_assess_consistent():
    r = assess(profile(age=70, smoker=True))
    assert r.category is categorize_risk(r.ten_year_risk)


def test_score_frame_requires_mapping():
    frame = pd.DataFrame(
        {"age_at_index": [60.0, 61.0, 62.0], "race": ["White", "Asian", "Black"], "total_cholesterol": [200.0, 200.0, np.nan],
         "hdl": [50.0] * 3, "systolic_bp": [120.0] * 3, "on_antihypertensive": [False] * 3,
         "smoking": [False] * 3, "diabetes": [False] * 3}
    )
    risk, reason = score_frame(frame, {"White": "white_or_other", "Black": "african_american"})
    assert np.isfinite(risk[0])
    assert list(reason) == ["", "unmapped_race", "missing"]


profiles = st.builds(
    AscvdInputs,
    age=st.floats(40, 79),
    sex=st.sampled_from(["female", "male"]),
    race_group=st.sampled_from(["white_or_other", "african_american"]),
    total_cholesterol=st.floats(130, 320),
    hdl=st.floats(20, 100),
    systolic_bp=st.floats(90, 200),
    bp_treated=st.booleans(),
    smoker=st.booleans(),
    diabetic=st.booleans(),
)


@given(p=profiles)
def test_monotone_in_sbp(p):
    risks = [ascvd_score(replace(p, systolic_bp=s)) for s in np.linspace(90, 200, 12)]
    assert np.all(np.diff(risks) > 0)
    assert ascvd_score(p) == ascvd_score(p)


@given(p=profiles.filter(lambda p: p.sex == "male"))
def test_monotone_in_age_men(p):
    risks = [ascvd_score(replace(p, age=a)) for a in np.linspace(40, 79, 14)]
    assert np.all(np.diff(risks) > 0)


def dsum_dlnage(p):
    """Derivative of the published individual sum with respect to ln(age)."""
    c = load_coefficients()["groups"][f"{p.sex}/{p.race_group}"]["coefficients"]
    sbp = "treated" if p.bp_treated else "untreated"
    return (
        c["ln_age"] + 2 * c["ln_age_sq"] * math.log(p.age)
        + c["ln_age_x_ln_tc"] * math.log(p.total_cholesterol)
        + c["ln_age_x_ln_hdl"] * math.log(p.hdl)
        + c[f"ln_age_x_ln_{sbp}_sbp"] * math.log(p.systolic_bp)
        + c["ln_age_x_smoker"] * p.smoker
    )


def test_female_equations_are_not_monotone_in_age():
    # the published coefficients let risk fall with age for some women
    p = profile(race_group="african_american", hdl=20, systolic_bp=200, bp_treated=True)
    assert dsum_dlnage(p) < 0
    assert ascvd_score(replace(p, age=70)) < ascvd_score(replace(p, age=50))


@given(p=profiles.filter(lambda p: p.sex == "female"))
def test_age_direction_follows_published_sum(p):
    slope = dsum_dlnage(p)
    if abs(slope) < 1e-3:
        return
    h = 1e-4 * p.age
    lo, hi = max(40.0, p.age - h), min(79.0, p.age + h)
    step = ascvd_score(replace(p, age=hi)) - ascvd_score(replace(p, age=lo))
    assert np.sign(step) == np.sign(slope)


@given(r=st.floats(0, 1), s=st.floats(0, 1))
def test_category_partition_monotone(r, s):
    order = list(RiskCategory)
    lo, hi = sorted((r, s))
    assert order.index(categorize_risk(lo)) <= order.index(categorize_risk(hi))


@pytest.mark.parametrize("witness,cat", [(0.02, "Low"), (0.06, "Borderline"), (0.10, "Intermediate"), (0.30, "High")])
def test_round_trip_witness(witness, cat):
    assert categorize_risk(witness).value == cat
