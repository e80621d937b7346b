"""Seeded synthetic cohorts with a known proportional-hazards structure.

Severity is drawn from the configured prevalences, BAC area uniformly inside
the drawn severity interval, and baseline characteristics from per-severity
distributions matching the internal-cohort baseline table. Each MACE component
has its own exponential (optionally Weibull) latent time whose hazards sum to
``baseline_hazard * exp(linear predictor)``, so the composite endpoint follows
the configured proportional-hazards model exactly.

Random numbers come from numpy's Philox counter-based generator. Subjects are
generated in fixed-size blocks, block ``b`` using key ``(seed, b)``, so the
output does not depend on how many workers generate the blocks.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, timedelta
import csv
import math
import warnings

import numpy as np
import pandas as pd

from .bac import SeverityThresholds
from .cohort import (
    DAYS_PER_YEAR,
    MACE_CODE_SETS,
    Endpoint,
    SubjectRecord,
    TimeToEvent,
)

PAPER_PREVALENCE = (0.664, 0.244, 0.071, 0.021)
PAPER_HAZARD_RATIOS = (1.0, 1.18, 1.47, 2.22)
SEVERE_CAP_MM2 = 700.0

# Per-severity (No BAC, Mild, Moderate, Severe) baseline characteristics.
_AGE = ((55.6, 10.0), (58.5, 10.3), (61.5, 10.5), (68.3, 9.0))
_RACE_PCT = {  # Asian, Black, Other, White
    "Asian": (6.6, 2.9, 2.7, 3.8),
    "Black": (43.7, 54.1, 54.5, 55.5),
    "Other": (6.6, 5.3, 4.4, 4.5),
    "White": (43.1, 37.7, 38.3, 36.2),
}
_BINARY_PCT = {
    "hispanic": (4.4, 3.1, 3.1, 4.3),
    "diabetes": (10.25, 20.0, 27.0, 41.0),
    "on_antihypertensive": (4.4, 7.7, 11.2, 21.8),
    "on_statin": (3.5, 6.4, 10.2, 20.2),
    "smoking": (7.6, 10.9, 12.7, 15.8),
}
_LABS = {  # mean, sd per severity; clip range
    "total_cholesterol": (((191.8, 32.9), (190.7, 34.5), (187.8, 37.1), (190.0, 37.2)), (100.0, 400.0)),
    "hdl": (((60.4, 15.2), (57.3, 14.2), (57.2, 14.0), (59.3, 14.6)), (15.0, 150.0)),
    "systolic_bp": (((127.2, 20.5), (131.7, 20.1), (134.3, 20.5), (137.4, 22.9)), (80.0, 240.0)),
    "bmi": (((28.3, 6.8), (32.4, 7.8), (34.2, 9.3), (31.5, 7.9)), (15.0, 70.0)),
    "egfr": (((68.9, 20.0), (64.9, 20.1), (61.6, 20.8), (48.1, 23.8)), (5.0, 150.0)),
}
# Centering used when covariate effects enter the linear predictor.
_CENTER = {"age_at_index": 57.0, "systolic_bp": 129.0, "total_cholesterol": 191.2, "hdl": 59.3, "bmi": 28.5, "egfr": 66.4}

_COMPONENT_SHARE = {Endpoint.AMI: 0.2, Endpoint.Stroke: 0.3, Endpoint.HF: 0.2, Endpoint.Death: 0.3}
_CODES = {
    Endpoint.AMI: sorted(c for c in MACE_CODE_SETS[Endpoint.AMI].exact_codes if c.startswith("I")),
    Endpoint.Stroke: ["I63.0", "I63.30", "I63.42", "I63.50", "I63.9"],
    Endpoint.HF: sorted(c for c in MACE_CODE_SETS[Endpoint.HF].exact_codes if c.startswith("I")),
}
_NOISE_CODES = ("Z12.31", "E11.9", "I10", "E78.5", "Z00.00")


@dataclass(frozen=True)
class SimConfig:
    """Ground truth for a synthetic cohort.

    ``true_log_hr`` holds one coefficient per severity class (No BAC first,
    normally 0). ``covariate_effects`` maps a subject field to a log-hazard
    coefficient per unit; continuous fields are centered first.
    ``censoring`` is the uniform administrative follow-up window in years.
    """

    n_subjects: int = 10_000
    severity_prevalence: tuple = PAPER_PREVALENCE
    true_log_hr: tuple = tuple(math.log(h) for h in PAPER_HAZARD_RATIOS)
    baseline_hazard: float = 0.01
    censoring: tuple = (5.0, 15.0)
    covariate_effects: dict = field(default_factory=dict)
    seed: int = 0
    thresholds: SeverityThresholds = SeverityThresholds()
    severe_cap: float = SEVERE_CAP_MM2
    weibull_shape: float = 1.0
    lab_missing_rate: float = 0.0
    prior_event_rate: float = 0.0
    noise_code_rate: float = 0.0
    index_date_range: tuple = (date(2008, 1, 1), date(2012, 12, 31))
    block_size: int = 8192

    def __post_init__(self):
        prev = np.asarray(self.severity_prevalence, dtype=float)
        if prev.shape != (4,) or np.any(prev < 0) or not math.isclose(prev.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("severity_prevalence must be 4 non-negative values summing to 1")
        if len(self.true_log_hr) != 4:
            raise ValueError("true_log_hr needs one coefficient per severity class")
        if not self.baseline_hazard > 0:
            raise ValueError("baseline_hazard must be positive")
        lo, hi = self.censoring
        if not 0 < lo <= hi:
            raise ValueError("censoring window must satisfy 0 < lower <= upper")
        if not self.severe_cap > self.thresholds.moderate_upper:
            raise ValueError("severe_cap must exceed the moderate upper threshold")
        if self.weibull_shape <= 0:
            raise ValueError("weibull_shape must be positive")
        if self.n_subjects < 0 or self.block_size <= 0:
            raise ValueError("n_subjects must be >= 0 and block_size > 0")

    @property
    def degenerate_classes(self):
        return [k for k, p in enumerate(self.severity_prevalence) if p == 0]

    def to_dict(self):
        return {
            "n_subjects": self.n_subjects,
            "severity_prevalence": list(self.severity_prevalence),
            "true_log_hr": list(self.true_log_hr),
            "baseline_hazard": self.baseline_hazard,
            "censoring": list(self.censoring),
            "covariate_effects": dict(sorted(self.covariate_effects.items())),
            "seed": self.seed,
            "thresholds": list(self.thresholds.edges),
            "severe_cap": self.severe_cap,
            "weibull_shape": self.weibull_shape,
            "lab_missing_rate": self.lab_missing_rate,
            "prior_event_rate": self.prior_event_rate,
            "noise_code_rate": self.noise_code_rate,
            "index_date_range": [d.isoformat() for d in self.index_date_range],
        }


@dataclass
class SyntheticCohort:
    """Simulated subjects, their outcomes and the raw tables they derive from.

    ``frame`` is the analysis frame (one row per subject, canonical columns),
    ``diagnoses`` the coded events as ``(subject_id, code, code_date)`` rows.
    """

    frame: pd.DataFrame
    diagnoses: pd.DataFrame
    ground_truth: SimConfig

    @property
    def severity(self):
        return self.frame["true_severity"].to_numpy()

    def subjects(self):
        return [_record_from_row(r) for r in self.frame.itertuples(index=False)]

    def time_to_event(self, endpoint=Endpoint.CompositeMACE):
        p = endpoint.column_prefix
        ids = self.frame["subject_id"].to_numpy()
        days = self.frame[f"{p}_days"].to_numpy()
        ev = self.frame[f"{p}_event"].to_numpy()
        return [TimeToEvent(str(i), endpoint, int(d), bool(e)) for i, d, e in zip(ids, days, ev)]


def _record_from_row(r):
    def opt(v):
        return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)

    return SubjectRecord(
        subject_id=r.subject_id,
        index_date=r.index_date,
        age_at_index=float(r.age_at_index),
        bac_area_mm2=float(r.bac_area_mm2),
        last_followup_date=r.last_followup_date,
        race=r.race,
        hispanic=bool(r.hispanic),
        diabetes=bool(r.diabetes),
        smoking=bool(r.smoking),
        on_statin=bool(r.on_statin),
        on_antihypertensive=bool(r.on_antihypertensive),
        systolic_bp=opt(r.systolic_bp),
        total_cholesterol=opt(r.total_cholesterol),
        hdl=opt(r.hdl),
        bmi=opt(r.bmi),
        egfr=opt(r.egfr),
        a1c=None,
        death_date=r.death_date if isinstance(r.death_date, date) else None,
    )


def block_generator(seed, block):
    """Philox generator for one block of subjects."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(block)]))


def _bac_bounds(config):
    t = config.thresholds
    lower = np.array([0.0, t.noise_floor, t.mild_upper, t.moderate_upper])
    upper = np.array([t.noise_floor, t.mild_upper, t.moderate_upper, config.severe_cap])
    return lower, upper


def _simulate_block(config, block, n):
    rng = block_generator(config.seed, block)
    prev = np.asarray(config.severity_prevalence, dtype=float)
    sev = rng.choice(4, size=n, p=prev / prev.sum())
    lower, upper = _bac_bounds(config)
    bac = lower[sev] + (upper[sev] - lower[sev]) * rng.random(n)

    age_mu = np.array([m for m, _ in _AGE])[sev]
    age_sd = np.array([s for _, s in _AGE])[sev]
    age = np.clip(np.round(rng.normal(age_mu, age_sd), 1), 30.0, 89.0)

    race_names = ("Asian", "Black", "Other", "White")
    race_p = np.array([_RACE_PCT[r] for r in race_names]).T
    race_p = race_p / race_p.sum(axis=1, keepdims=True)
    cum = np.cumsum(race_p[sev], axis=1)
    race_idx = (rng.random(n)[:, None] > cum).sum(axis=1)
    race = np.array(race_names)[np.minimum(race_idx, 3)]

    cols = {"age_at_index": age, "race": race}
    for name, pct in _BINARY_PCT.items():
        cols[name] = rng.random(n) < np.asarray(pct)[sev] / 100.0
    for name, (params, (lo, hi)) in _LABS.items():
        mu = np.array([m for m, _ in params])[sev]
        sd = np.array([s for _, s in params])[sev]
        value = np.clip(np.round(rng.normal(mu, sd), 1), lo, hi)
        if config.lab_missing_rate > 0:
            value[rng.random(n) < config.lab_missing_rate] = np.nan
        cols[name] = value

    lp = np.asarray(config.true_log_hr, dtype=float)[sev]
    for name, beta in config.covariate_effects.items():
        if name not in cols or name == "race":
            raise ValueError(f"unknown or non-numeric covariate effect {name!r}")
        x = cols[name].astype(float) - _CENTER.get(name, 0.0)
        lp = lp + beta * np.nan_to_num(x)

    # latent component times in years; composite hazard = baseline * exp(lp)
    k = config.weibull_shape
    latent = {}
    for ep, share in _COMPONENT_SHARE.items():
        rate = config.baseline_hazard * share * np.exp(lp)
        latent[ep] = (rng.exponential(size=n) / rate) ** (1.0 / k)
    lo, hi = config.censoring
    follow_days = np.ceil(rng.uniform(lo, hi, size=n) * DAYS_PER_YEAR).astype(np.int64)

    start, stop = config.index_date_range
    span = (stop - start).days
    index_offset = rng.integers(0, span + 1, size=n)
    prior = rng.random(n) < config.prior_event_rate
    prior_ep = rng.integers(0, 3, size=n)
    prior_days = rng.integers(1, 3 * 365, size=n)
    code_pick = rng.random((n, 3))
    noise = rng.random(n) < config.noise_code_rate
    noise_pick = rng.integers(0, len(_NOISE_CODES), size=n)
    noise_day = rng.integers(-365, 365, size=n)

    days = {ep: np.maximum(np.ceil(t * DAYS_PER_YEAR), 1).astype(np.int64) for ep, t in latent.items()}
    death_day = np.where(days[Endpoint.Death] <= follow_days, days[Endpoint.Death], -1)
    last_day = np.where(death_day > 0, death_day, follow_days)
    cols["true_severity"] = sev
    cols["bac_area_mm2"] = bac
    cols["_index_offset"] = index_offset
    cols["_last_day"] = last_day
    cols["_death_day"] = death_day
    for ep in (Endpoint.AMI, Endpoint.Stroke, Endpoint.HF):
        d = days[ep]
        observed = (d <= follow_days) & ((death_day < 0) | (d <= death_day))
        cols[f"_{ep.column_prefix}_day"] = np.where(observed, d, -1)
    cols["_prior"] = prior
    cols["_prior_ep"] = prior_ep
    cols["_prior_days"] = prior_days
    cols["_code_pick"] = code_pick
    cols["_noise"] = noise
    cols["_noise_pick"] = noise_pick
    cols["_noise_day"] = noise_day
    return cols


def simulate_cohort(config, n_jobs=1):
    """Generate a :class:`SyntheticCohort` for ``config``.

    Output is identical for a given config regardless of ``n_jobs``.
    """
    if config.degenerate_classes:
        warnings.warn(f"severity classes {config.degenerate_classes} have zero prevalence", stacklevel=2)
    n = config.n_subjects
    sizes = [min(config.block_size, n - b * config.block_size) for b in range(math.ceil(n / config.block_size))]
    if n_jobs > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            blocks = list(pool.map(lambda b: _simulate_block(config, b, sizes[b]), range(len(sizes))))
    else:
        blocks = [_simulate_block(config, b, s) for b, s in enumerate(sizes)]
    if blocks:
        cols = {k: np.concatenate([blk[k] for blk in blocks]) for k in blocks[0]}
    else:
        cols = _simulate_block(config, 0, 0)

    width = max(6, len(str(n)))
    ids = np.array([f"S{i:0{width}d}" for i in range(n)])
    start = config.index_date_range[0]
    index_dates = [start + timedelta(days=int(o)) for o in cols["_index_offset"]]

    frame = pd.DataFrame(
        {
            "subject_id": ids,
            "index_date": index_dates,
            "age_at_index": cols["age_at_index"],
            "race": cols["race"],
            "hispanic": cols["hispanic"],
            "diabetes": cols["diabetes"],
            "smoking": cols["smoking"],
            "on_statin": cols["on_statin"],
            "on_antihypertensive": cols["on_antihypertensive"],
            "systolic_bp": cols["systolic_bp"],
            "total_cholesterol": cols["total_cholesterol"],
            "hdl": cols["hdl"],
            "bmi": cols["bmi"],
            "egfr": cols["egfr"],
            "a1c": np.full(n, np.nan),
            "bac_area_mm2": cols["bac_area_mm2"],
        }
    )
    frame["last_followup_date"] = [d + timedelta(days=int(k)) for d, k in zip(index_dates, cols["_last_day"])]
    frame["death_date"] = [
        d + timedelta(days=int(k)) if k > 0 else None for d, k in zip(index_dates, cols["_death_day"])
    ]

    # outcomes follow the same rules as cohort.build_time_to_event
    last = cols["_last_day"]
    death = cols["_death_day"]
    comp_day = np.full(n, np.iinfo(np.int64).max)
    for ep in (Endpoint.AMI, Endpoint.Stroke, Endpoint.HF):
        d = cols[f"_{ep.column_prefix}_day"]
        hit = d > 0
        frame[f"{ep.column_prefix}_days"] = np.where(hit, d, last)
        frame[f"{ep.column_prefix}_event"] = hit
        comp_day = np.where(hit, np.minimum(comp_day, d), comp_day)
    died = death > 0
    frame["death_days"] = np.where(died, death, last)
    frame["death_event"] = died
    comp_day = np.where(died, np.minimum(comp_day, death), comp_day)
    any_event = comp_day < np.iinfo(np.int64).max
    frame["mace_days"] = np.where(any_event, comp_day, last)
    frame["mace_event"] = any_event
    frame["true_severity"] = cols["true_severity"]

    rows = []
    for ep_i, ep in enumerate((Endpoint.AMI, Endpoint.Stroke, Endpoint.HF)):
        d = cols[f"_{ep.column_prefix}_day"]
        codes = _CODES[ep]
        for i in np.flatnonzero(d > 0):
            code = codes[int(cols["_code_pick"][i, ep_i] * len(codes))]
            rows.append((ids[i], code, index_dates[i] + timedelta(days=int(d[i]))))
    for i in np.flatnonzero(cols["_prior"]):
        ep = (Endpoint.AMI, Endpoint.Stroke, Endpoint.HF)[int(cols["_prior_ep"][i])]
        codes = _CODES[ep]
        code = codes[int(cols["_code_pick"][i, 0] * len(codes))]
        rows.append((ids[i], code, index_dates[i] - timedelta(days=int(cols["_prior_days"][i]))))
    for i in np.flatnonzero(cols["_noise"]):
        rows.append((ids[i], _NOISE_CODES[int(cols["_noise_pick"][i])], index_dates[i] + timedelta(days=int(cols["_noise_day"][i]))))
    rows.sort(key=lambda r: (r[0], r[2], r[1]))
    diagnoses = pd.DataFrame(rows, columns=["subject_id", "code", "code_date"])
    frame["prior_event"] = cols["_prior"]
    return SyntheticCohort(frame=frame, diagnoses=diagnoses, ground_truth=config)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return "" if np.isnan(value) else repr(float(value))
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


RAW_SUBJECT_COLUMNS = (
    ("subject_id", "subject_id"), ("index_date", "index_date"), ("age", "age_at_index"), ("race", "race"),
    ("hispanic", "hispanic"), ("diabetes", "diabetes"), ("smoking", "smoking"), ("on_statin", "on_statin"),
    ("on_antihypertensive", "on_antihypertensive"), ("systolic_bp", "systolic_bp"),
    ("total_cholesterol", "total_cholesterol"), ("hdl", "hdl"), ("bmi", "bmi"), ("egfr", "egfr"),
    ("bac_area_mm2", "bac_area_mm2"), ("last_followup_date", "last_followup_date"), ("death_date", "death_date"),
)


def write_raw_tables(cohort, subjects_stream, diagnoses_stream):
    """Write the subjects and diagnoses input tables that ingestion consumes."""
    w = csv.writer(subjects_stream, lineterminator="\n")
    w.writerow([name for name, _ in RAW_SUBJECT_COLUMNS])
    values = [cohort.frame[col].tolist() for _, col in RAW_SUBJECT_COLUMNS]
    for row in zip(*values):
        w.writerow([_fmt(v) for v in row])
    w = csv.writer(diagnoses_stream, lineterminator="\n")
    w.writerow(["subject_id", "code", "code_date"])
    for row in cohort.diagnoses.itertuples(index=False):
        w.writerow([row.subject_id, row.code, row.code_date.isoformat()])
