"""10-year ASCVD risk from the 2013 pooled cohort equations.

Coefficients live in ``data/pce_coefficients.json`` together with their
source citation and the validity ranges enforced by :func:`ascvd_score`.
"""

import csv
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
import json
import math

import numpy as np


class RiskCategory(str, Enum):
    Low = "Low"
    Borderline = "Borderline"
    Intermediate = "Intermediate"
    High = "High"


# Lower bounds of each category; a risk equal to a bound belongs to the higher category.
CATEGORY_BOUNDS = ((0.05, RiskCategory.Borderline), (0.075, RiskCategory.Intermediate), (0.20, RiskCategory.High))

RACE_GROUPS = ("white_or_other", "african_american")


class AscvdRangeError(ValueError):
    """An input lies outside the range over which the equations were derived."""

    def __init__(self, field, value, bounds):
        self.field = field
        self.value = value
        self.bounds = bounds
        super().__init__(f"{field}={value} outside validity range [{bounds[0]}, {bounds[1]}]")


@lru_cache(maxsize=1)
def load_coefficients():
    text = resources.files("bacsurv.data").joinpath("pce_coefficients.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class AscvdInputs:
    age: float
    sex: str
    race_group: str
    total_cholesterol: float
    hdl: float
    systolic_bp: float
    bp_treated: bool
    smoker: bool
    diabetic: bool

    def validate(self):
        table = load_coefficients()
        if self.sex not in ("female", "male"):
            raise ValueError(f"sex must be 'female' or 'male', got {self.sex!r}")
        if self.race_group not in RACE_GROUPS:
            raise ValueError(f"race_group must be one of {RACE_GROUPS}, got {self.race_group!r}")
        for name, (lo, hi) in table["validity_ranges"].items():
            value = getattr(self, name)
            if value is None or not (lo <= value <= hi):
                raise AscvdRangeError(name, value, (lo, hi))


@dataclass(frozen=True)
class AscvdResult:
    ten_year_risk: float
    category: RiskCategory


def individual_sum(inputs):
    """Sum of coefficient times transformed risk factor for one person."""
    group = load_coefficients()["groups"][f"{inputs.sex}/{inputs.race_group}"]
    c = group["coefficients"]
    ln_age = math.log(inputs.age)
    ln_tc = math.log(inputs.total_cholesterol)
    ln_hdl = math.log(inputs.hdl)
    ln_sbp = math.log(inputs.systolic_bp)
    treated = 1.0 if inputs.bp_treated else 0.0
    smoker = 1.0 if inputs.smoker else 0.0
    return (
        c["ln_age"] * ln_age
        + c["ln_age_sq"] * ln_age**2
        + c["ln_tc"] * ln_tc
        + c["ln_age_x_ln_tc"] * ln_age * ln_tc
        + c["ln_hdl"] * ln_hdl
        + c["ln_age_x_ln_hdl"] * ln_age * ln_hdl
        + treated * (c["ln_treated_sbp"] * ln_sbp + c["ln_age_x_ln_treated_sbp"] * ln_age * ln_sbp)
        + (1.0 - treated) * (c["ln_untreated_sbp"] * ln_sbp + c["ln_age_x_ln_untreated_sbp"] * ln_age * ln_sbp)
        + c["smoker"] * smoker
        + c["ln_age_x_smoker"] * ln_age * smoker
        + c["diabetes"] * (1.0 if inputs.diabetic else 0.0)
    )


def ascvd_score(inputs):
    """10-year ASCVD risk as a probability: ``1 - S0 ** exp(sum - mean_sum)``.

    Raises
    ------
    AscvdRangeError
        If age, cholesterol, HDL or systolic BP is out of range. Inputs are
        never clamped.
    """
    inputs.validate()
    group = load_coefficients()["groups"][f"{inputs.sex}/{inputs.race_group}"]
    s = individual_sum(inputs)
    return 1.0 - group["baseline_survival"] ** math.exp(s - group["mean_sum"])


def categorize_risk(ten_year_risk):
    """Guideline category: Low <5%, Borderline 5-7.5%, Intermediate 7.5-20%, High >=20%."""
    if not (0.0 <= ten_year_risk <= 1.0):
        raise ValueError(f"risk must be a probability, got {ten_year_risk}")
    category = RiskCategory.Low
    for bound, label in CATEGORY_BOUNDS:
        if ten_year_risk >= bound:
            category = label
    return category


def assess(inputs):
    risk = ascvd_score(inputs)
    return AscvdResult(risk, categorize_risk(risk))


def map_race_group(race, mapping):
    """Translate a cohort race label to an equation race group.

    ``mapping`` must be supplied explicitly; unmapped labels raise ``KeyError``
    instead of being assigned a default.
    """
    if race not in mapping:
        raise KeyError(f"no ASCVD race-group mapping configured for race {race!r}")
    group = mapping[race]
    if group not in RACE_GROUPS:
        raise ValueError(f"mapping for {race!r} must be one of {RACE_GROUPS}, got {group!r}")
    return group


def score_frame(frame, race_mapping, sex="female"):
    """Score every subject of a cohort frame.

    Returns ``(risk, reason)`` arrays; ``risk`` is NaN where the subject could
    not be scored and ``reason`` then names the cause (missing value,
    out-of-range field or unmapped race).
    """
    n = len(frame)
    risk = np.full(n, np.nan)
    reason = np.full(n, "", dtype=object)
    cols = ["age_at_index", "race", "total_cholesterol", "hdl", "systolic_bp", "on_antihypertensive", "smoking", "diabetes"]
    values = {c: frame[c].to_numpy() for c in cols}
    for i in range(n):
        tc, hdl, sbp = values["total_cholesterol"][i], values["hdl"][i], values["systolic_bp"][i]
        if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in (tc, hdl, sbp)):
            reason[i] = "missing"
            continue
        try:
            group = map_race_group(values["race"][i], race_mapping)
            inputs = AscvdInputs(
                age=float(values["age_at_index"][i]),
                sex=sex,
                race_group=group,
                total_cholesterol=float(tc),
                hdl=float(hdl),
                systolic_bp=float(sbp),
                bp_treated=bool(values["on_antihypertensive"][i]),
                smoker=bool(values["smoking"][i]),
                diabetic=bool(values["diabetes"][i]),
            )
            risk[i] = ascvd_score(inputs)
        except AscvdRangeError as exc:
            reason[i] = f"out_of_range:{exc.field}"
        except KeyError:
            reason[i] = "unmapped_race"
    return risk, reason


ORACLE_COLUMNS = (
    "age", "sex", "race_group", "total_cholesterol", "hdl", "systolic_bp", "bp_treated", "smoker", "diabetic",
    "oracle_risk_pct",
)


def read_oracle_profiles(stream):
    """Read pinned reference profiles: one row per profile, risk in percent.

    Extra columns (for example ``source``) are kept on each row.
    """
    reader = csv.DictReader(stream)
    missing = [c for c in ORACLE_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ValueError(f"oracle table missing column(s): {', '.join(missing)}")
    rows = []
    for row in reader:
        flag = {k: row[k].strip().lower() in ("1", "true", "yes") for k in ("bp_treated", "smoker", "diabetic")}
        inputs = AscvdInputs(
            age=float(row["age"]), sex=row["sex"].strip(), race_group=row["race_group"].strip(),
            total_cholesterol=float(row["total_cholesterol"]), hdl=float(row["hdl"]),
            systolic_bp=float(row["systolic_bp"]), **flag,
        )
        rows.append((inputs, float(row["oracle_risk_pct"]), {k: v for k, v in row.items() if k not in ORACLE_COLUMNS}))
    return rows


def compare_with_oracle(profiles):
    """Engine vs reference risks (percent) with Pearson R and max absolute difference.

    ``profiles`` is a sequence of ``(AscvdInputs, oracle_risk_pct, extra)`` as
    returned by :func:`read_oracle_profiles`.
    """
    engine = np.array([100.0 * ascvd_score(p[0]) for p in profiles])
    oracle = np.array([p[1] for p in profiles])
    n = engine.size
    r = float(np.corrcoef(engine, oracle)[0, 1]) if n >= 2 and engine.std() > 0 and oracle.std() > 0 else float("nan")
    diff = np.abs(engine - oracle)
    return {
        "n_profiles": n,
        "pearson_r": r,
        "max_abs_diff_pct_points": float(diff.max()) if n else float("nan"),
        "mean_abs_diff_pct_points": float(diff.mean()) if n else float("nan"),
        "engine_pct": engine.tolist(),
        "oracle_pct": oracle.tolist(),
    }
