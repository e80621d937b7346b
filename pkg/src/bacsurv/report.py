"""End-to-end report: ingest, exclusions, Table 1, KM curves, Cox fits, sweep.

:func:`run_pipeline` writes every output below ``RunConfig.output_dir``:

=========================  ==================================================
``exclusions.json``        patient-flow counts per exclusion reason
``cohort.csv``             canonical cohort table of eligible subjects
``table1.csv``             baseline characteristics by severity and MACE
``km/``                    KM rows (CSV), log-rank (JSON), plots (SVG) per
                           endpoint and age stratum
``under50/``               any BAC vs none in subjects under 50
``ascvd/``                 per-subject scores and KM within ASCVD categories
``cox/``                   one JSON bundle per adjustment set
``sweep/``                 threshold-sweep trace, selection and heat-map
``manifest.json``          analysis status and the list of files written
=========================  ==================================================

Each analysis runs in isolation: a failure is recorded in the manifest and
the remaining analyses still complete.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
import csv
import io
import json
import math
import os
import traceback

import numpy as np

from .ascvd import RiskCategory, categorize_risk, score_frame
from .bac import SeverityClass, SeverityThresholds, classify_severity_array, log2_bac
from .cohort import (
    ALL_ENDPOINTS,
    Endpoint,
    assemble_cohort,
    load_schema,
    parse_cohort,
    parse_diagnoses,
    write_cohort_table,
)
from .plots import StepSeries, km_svg, sweep_svg
from .survival import CoxFitError, CoxSpec, UndefinedStatisticError, cox_fit, hazard_ratio_table, kaplan_meier, logrank_test
from .table1 import build_table1, write_table1
from .thresholds import SweepConfig, sweep_thresholds, validate_groupings, write_trace

REPORT_SCHEMA = "bacsurv.report/1"

# Named Cox adjustment sets. "sex" is listed because the source model names
# it; in a female-only cohort it is constant and reported as omitted.
ADJUSTMENT_SETS = {
    "unadjusted": (),
    "statistical_analysis": ("age_at_index", "diabetes", "smoking", "on_statin", "on_antihypertensive"),
    "table2_footnote": (
        "age_at_index", "sex", "race", "systolic_bp", "diabetes", "smoking", "total_cholesterol", "hdl", "egfr",
    ),
}
DEFAULT_RACE_MAPPING = {"Black": "african_american", "White": "white_or_other"}


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """Everything :func:`run_pipeline` needs; loadable from one JSON file.

    Either ``subjects_path`` (plus ``diagnoses_path``) or ``cohort_path`` (a
    canonical cohort table) must be given. ``age_strata`` are half-open
    ``[lo, hi)`` year ranges and must not overlap.
    """

    subjects_path: str = None
    diagnoses_path: str = None
    cohort_path: str = None
    column_mapping: dict = field(default_factory=dict)
    diagnosis_column_mapping: dict = field(default_factory=dict)
    endpoints: tuple = tuple(e.value for e in ALL_ENDPOINTS)
    thresholds: tuple = (2.0, 10.0, 40.0)
    adjustment_sets: tuple = ("statistical_analysis", "table2_footnote")
    age_strata: tuple = ((40.0, 60.0), (60.0, 80.0))
    under_age: float = 50.0
    race_mapping: dict = field(default_factory=lambda: dict(DEFAULT_RACE_MAPPING))
    min_followup_years: float = 5.0
    tie_method: str = "efron"
    run_sweep: bool = True
    sweep: dict = field(default_factory=dict)
    km_ticks_years: tuple = (0, 2, 4, 6, 8, 10, 12, 14)
    output_dir: str = "report"
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        self.endpoints = tuple(self.endpoints)
        self.thresholds = tuple(float(t) for t in self.thresholds)
        self.adjustment_sets = tuple(self.adjustment_sets)
        self.age_strata = tuple((float(a), float(b)) for a, b in self.age_strata)
        self.km_ticks_years = tuple(self.km_ticks_years)

    @classmethod
    def from_file(cls, path, **overrides):
        with open(path) as fh:
            data = json.load(fh)
        base = os.path.dirname(os.path.abspath(path))
        for key in ("subjects_path", "diagnoses_path", "cohort_path"):
            if data.get(key) and not os.path.isabs(data[key]):
                data[key] = os.path.join(base, data[key])
        if isinstance(data.get("column_mapping"), str):
            data["column_mapping"] = load_schema(os.path.join(base, data["column_mapping"]))
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def severity_thresholds(self):
        return SeverityThresholds(*self.thresholds)

    def endpoint_list(self):
        try:
            return [Endpoint(e) for e in self.endpoints]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self):
        if self.cohort_path is None and self.subjects_path is None:
            raise ConfigError("either subjects_path or cohort_path is required")
        if self.cohort_path is None and self.diagnoses_path is None:
            raise ConfigError("diagnoses_path is required with subjects_path")
        self.endpoint_list()
        try:
            self.severity_thresholds()
            SweepConfig(**self.sweep)
            CoxSpec(tie_method=self.tie_method)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        for name in self.adjustment_sets:
            if name not in ADJUSTMENT_SETS:
                raise ConfigError(f"unknown adjustment set {name!r}; choose from {sorted(ADJUSTMENT_SETS)}")
        strata = sorted(self.age_strata)
        for lo, hi in strata:
            if not lo < hi:
                raise ConfigError(f"age stratum [{lo}, {hi}) is empty")
        for (_, hi), (lo, _) in zip(strata, strata[1:]):
            if lo < hi:
                raise ConfigError("age strata overlap")

    def to_dict(self):
        d = asdict(self)
        d.pop("output_dir")
        d.pop("n_jobs")
        return d


# ---------------------------------------------------------------------------
# serialization helpers


def _clean(obj):
    """Make ``obj`` JSON-ready with stable float formatting."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(f"{x:.12g}") if math.isfinite(x) else None
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


class _Writer:
    def __init__(self, root):
        self.root = root
        self.files = []

    def path(self, rel):
        full = os.path.join(self.root, rel)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def text(self, rel, content):
        with open(self.path(rel), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        self.files.append(rel)

    def json(self, rel, obj):
        self.text(rel, dumps(obj))


# ---------------------------------------------------------------------------
# design matrices


def design_matrix(frame, exposure, covariates=(), thresholds=None, extra=None):
    """Cox design for one model.

    Returns ``(X, names, rows, omitted)`` where ``rows`` selects the complete
    cases and ``omitted`` maps requested terms that could not enter the model
    to a reason.
    """
    thresholds = thresholds or SeverityThresholds()
    n = len(frame)
    cols, names = [], []
    omitted = {}
    rows = np.ones(n, dtype=bool)
    bac = frame["bac_area_mm2"].to_numpy(dtype=float)
    if exposure == "categorical":
        sev = classify_severity_array(bac, thresholds)
        for k in (SeverityClass.Mild, SeverityClass.Moderate, SeverityClass.Severe):
            cols.append((sev == int(k)).astype(float))
            names.append(f"{k.label} BAC")
    elif exposure == "continuous":
        cols.append(log2_bac(bac))
        names.append("log2(BAC+1)")
    elif exposure == "any":
        cols.append((classify_severity_array(bac, thresholds) > 0).astype(float))
        names.append("Any BAC")
    for cov in covariates:
        if cov == "sex":
            omitted["sex"] = "constant in a female-only cohort"
            continue
        if cov == "race":
            race = frame["race"].to_numpy()
            for level in ("Asian", "Black", "Other"):
                cols.append((race == level).astype(float))
                names.append(f"race: {level}")
            continue
        x = frame[cov].to_numpy(dtype=float)
        rows &= ~np.isnan(x)
        cols.append(x)
        names.append(cov)
    for name, values in (extra or {}).items():
        x = np.asarray(values, dtype=float)
        rows &= ~np.isnan(x)
        cols.append(x)
        names.append(name)
    X = np.column_stack(cols) if cols else np.zeros((n, 0))
    return X, names, rows, omitted


def cox_cell(frame, endpoint, exposure, adjustment, covariates, config, extra=None):
    """Fit one hazard-ratio cell and return its JSON-ready summary."""
    X, names, rows, omitted = design_matrix(frame, exposure, covariates, config.severity_thresholds(), extra)
    p = endpoint.column_prefix
    cell = {
        "endpoint": endpoint.value,
        "exposure": exposure,
        "adjustment": adjustment,
        "covariates": list(covariates) + list(extra or {}),
        "omitted_terms": omitted,
        "n_complete_case": int(rows.sum()),
    }
    try:
        fit = cox_fit(
            frame[f"{p}_days"].to_numpy()[rows],
            frame[f"{p}_event"].to_numpy()[rows],
            X[rows],
            spec=CoxSpec(exposure=exposure if exposure != "any" else "categorical", tie_method=config.tie_method),
            names=names,
        )
    except CoxFitError as exc:
        cell.update({"converged": False, "error": str(exc), "terms": []})
        return cell
    cell.update(
        {
            "converged": bool(fit.converged),
            "n_subjects": fit.n_subjects,
            "n_events": fit.n_events,
            "iterations": fit.iterations_used,
            "log_partial_likelihood": fit.log_partial_likelihood,
            "dropped_terms": list(fit.dropped_terms),
            "terms": hazard_ratio_table(fit) if fit.converged else [],
        }
    )
    return cell


# ---------------------------------------------------------------------------
# analyses


def _km_outputs(writer, stem, durations, events, groups, labels, title, ticks):
    """KM rows, plot and log-rank for integer ``groups`` named by ``labels``."""
    present = set(np.unique(groups).tolist())
    order = [labels[k] for k in sorted(labels) if k in present]
    names = np.array([labels[k] for k in sorted(labels)], dtype=object)[groups]
    curves = kaplan_meier(durations, events, names, labels=order)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["stratum", "time", "n_at_risk", "n_events", "n_censored", "survival", "variance", "ci_lower", "ci_upper"]
    w.writerow(cols)
    for curve in curves.values():
        for r in curve.rows():
            w.writerow([f"{r[c]:.12g}" if isinstance(r[c], float) else r[c] for c in cols])
    writer.text(f"{stem}.csv", buf.getvalue())
    series = [StepSeries.from_curve(c, risk_ticks=ticks) for c in curves.values()]
    writer.text(f"{stem}.svg", km_svg(series, title=title))
    result = {"strata": {k: c.n_subjects for k, c in curves.items()}}
    if len(order) >= 2:
        try:
            result["logrank"] = logrank_test(durations, events, names).to_dict()
        except UndefinedStatisticError as exc:
            result["logrank"] = {"error": str(exc)}
    else:
        result["logrank"] = {"error": "fewer than two non-empty groups"}
    writer.json(f"{stem}.json", result)
    return result


def _ticks(config):
    return [float(t) for t in config.km_ticks_years]


def analysis_km(frame, config, writer):
    sev = classify_severity_array(frame["bac_area_mm2"].to_numpy(dtype=float), config.severity_thresholds())
    labels = {int(k): f"{k.label}" for k in SeverityClass}
    age = frame["age_at_index"].to_numpy(dtype=float)
    strata = [("all", np.ones(len(frame), dtype=bool))]
    strata += [(f"age{lo:g}-{hi:g}", (age >= lo) & (age < hi)) for lo, hi in config.age_strata]
    summary = {}
    for ep in config.endpoint_list():
        p = ep.column_prefix
        for name, m in strata:
            if not m.any():
                summary[f"{p}/{name}"] = {"skipped": "no subjects in stratum"}
                continue
            title = f"{ep.value} by BAC severity ({name})"
            summary[f"{p}/{name}"] = _km_outputs(
                writer, f"km/{p}_{name}", frame[f"{p}_days"].to_numpy()[m], frame[f"{p}_event"].to_numpy()[m],
                sev[m], labels, title, _ticks(config),
            )
    return summary


def analysis_under50(frame, config, writer):
    age = frame["age_at_index"].to_numpy(dtype=float)
    m = age < config.under_age
    if not m.any():
        return {"skipped": f"no subjects under {config.under_age:g}"}
    sev = classify_severity_array(frame["bac_area_mm2"].to_numpy(dtype=float), config.severity_thresholds())
    anybac = (sev > 0).astype(int)
    out = {}
    for ep in config.endpoint_list():
        p = ep.column_prefix
        out[p] = _km_outputs(
            writer, f"under50/{p}", frame[f"{p}_days"].to_numpy()[m], frame[f"{p}_event"].to_numpy()[m],
            anybac[m], {0: "No BAC", 1: "Any BAC"}, f"{ep.value}, age < {config.under_age:g}: any BAC vs none",
            _ticks(config),
        )
    return out


def _ascvd_scores(frame, config):
    risk, reason = score_frame(frame, config.race_mapping)
    category = np.array([categorize_risk(r).value if np.isfinite(r) else "" for r in risk], dtype=object)
    return risk, reason, category


def analysis_ascvd(frame, config, writer, scores):
    risk, reason, category = scores
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "ascvd_risk", "category", "not_scored_reason"])
    for sid, r, c, why in zip(frame["subject_id"], risk, category, reason):
        w.writerow([sid, "" if not np.isfinite(r) else f"{r:.12g}", c, why])
    writer.text("ascvd/scores.csv", buf.getvalue())
    sev = classify_severity_array(frame["bac_area_mm2"].to_numpy(dtype=float), config.severity_thresholds())
    anybac = (sev > 0).astype(int)
    reasons = {}
    for why in reason:
        if why:
            key = why.split(":")[0]
            reasons[key] = reasons.get(key, 0) + 1
    out = {"n_scored": int(np.isfinite(risk).sum()), "not_scored": dict(sorted(reasons.items())), "categories": {}}
    for cat in RiskCategory:
        m = category == cat.value
        if not m.any():
            out["categories"][cat.value] = {"skipped": "no subjects"}
            continue
        out["categories"][cat.value] = _km_outputs(
            writer, f"ascvd/km_mace_{cat.value.lower()}", frame["mace_days"].to_numpy()[m],
            frame["mace_event"].to_numpy()[m], anybac[m], {0: "No BAC", 1: "Any BAC"},
            f"MACE, ASCVD {cat.value}: any BAC vs none", _ticks(config),
        )
    return out


def analysis_cox(frame, config, writer, scores):
    out = {}
    bundles = ("unadjusted",) + tuple(s for s in config.adjustment_sets if s != "unadjusted")
    for name in bundles:
        cells = []
        for ep in config.endpoint_list():
            for exposure in ("categorical", "continuous"):
                cells.append(cox_cell(frame, ep, exposure, name, ADJUSTMENT_SETS[name], config))
        writer.json(f"cox/{name}.json", {"schema": "bacsurv.cox/1", "adjustment_set": name,
                                         "covariates": list(ADJUSTMENT_SETS[name]), "cells": cells})
        out[name] = sum(1 for c in cells if c["converged"])
    # BAC alongside the ASCVD score (in percent, so HR is per percentage point)
    risk = scores[0] * 100.0
    cells = [cox_cell(frame, ep, "continuous", "ascvd", (), config, extra={"ascvd_risk_pct": risk})
             for ep in config.endpoint_list()]
    writer.json("cox/ascvd.json", {"schema": "bacsurv.cox/1", "adjustment_set": "ascvd",
                                   "covariates": ["ascvd_risk_pct"], "cells": cells})
    out["ascvd"] = sum(1 for c in cells if c["converged"])
    return out


def analysis_sweep(frame, config, writer):
    sweep_config = SweepConfig(**config.sweep)
    bac = frame["bac_area_mm2"].to_numpy(dtype=float)
    durations = frame["mace_days"].to_numpy()
    events = frame["mace_event"].to_numpy()
    result = sweep_thresholds(bac, durations, events, sweep_config)
    buf = io.StringIO()
    write_trace(result, buf)
    writer.text("sweep/trace.csv", buf.getvalue())
    writer.json("sweep/selected.json", result.to_dict())
    writer.text("sweep/heatmap.svg", sweep_svg(result.trace, result.selected))
    t = config.severity_thresholds()
    checks = {
        "configured": [c.to_dict() for c in validate_groupings(bac, durations, events, t)],
        "selected": [
            c.to_dict()
            for c in validate_groupings(bac, durations, events, SeverityThresholds(t.noise_floor, *result.selected))
        ],
    }
    writer.json("sweep/validation.json", checks)
    return {"selected": list(result.selected), "non_separating": result.non_separating}


# ---------------------------------------------------------------------------


@dataclass
class ReportBundle:
    output_dir: str
    files: list
    status: dict
    exclusions: dict

    @property
    def failed(self):
        return sorted(k for k, v in self.status.items() if v["status"] == "failed")

    @property
    def ok(self):
        return not self.failed


def load_cohort(config):
    """Parse the configured inputs and return the eligible :class:`~bacsurv.cohort.Cohort`."""
    if config.cohort_path:
        from .cohort import Cohort, ExclusionReport, read_cohort_table

        with open(config.cohort_path, newline="") as fh:
            subjects, outcomes = read_cohort_table(fh)
        report = ExclusionReport(input_rows=len(subjects), eligible=len(subjects),
                                 min_followup_years=config.min_followup_years)
        return Cohort(subjects, outcomes, report)
    with open(config.subjects_path, newline="") as fh:
        subjects = parse_cohort(fh, config.column_mapping or None)
    with open(config.diagnoses_path, newline="") as fh:
        diagnoses = parse_diagnoses(fh, config.diagnosis_column_mapping or None)
    return assemble_cohort(subjects, diagnoses, config.min_followup_years)


def run_pipeline(config):
    """Run every analysis and write the report bundle.

    Raises
    ------
    ConfigError, SchemaError, OSError
        For invalid configuration or unreadable inputs (nothing is written).
    """
    config.validate()
    cohort = load_cohort(config)
    writer = _Writer(config.output_dir)
    os.makedirs(config.output_dir, exist_ok=True)
    exclusions = cohort.report.to_dict()
    writer.json("exclusions.json", exclusions)
    frame = cohort.to_frame()
    buf = io.StringIO()
    write_cohort_table(frame, buf)
    writer.text("cohort.csv", buf.getvalue())

    status = {}
    if len(frame) == 0:
        for name in ("table1", "km", "under50", "ascvd", "cox", "sweep"):
            status[name] = {"status": "skipped", "detail": "no eligible subjects"}
    else:
        scores = _ascvd_scores(frame, config)
        jobs = {
            "table1": lambda w: _table1(frame, config, w),
            "km": lambda w: analysis_km(frame, config, w),
            "under50": lambda w: analysis_under50(frame, config, w),
            "ascvd": lambda w: analysis_ascvd(frame, config, w, scores),
            "cox": lambda w: analysis_cox(frame, config, w, scores),
        }
        if config.run_sweep:
            jobs["sweep"] = lambda w: analysis_sweep(frame, config, w)

        def run(name):
            sub = _Writer(config.output_dir)
            try:
                return name, {"status": "ok", "detail": jobs[name](sub)}, sub.files
            except Exception as exc:  # isolate: one failed analysis must not stop the others
                return name, {"status": "failed", "detail": f"{type(exc).__name__}: {exc}",
                              "traceback_tail": traceback.format_exc().strip().splitlines()[-1]}, sub.files

        names = list(jobs)
        if config.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
                results = list(pool.map(run, names))
        else:
            results = [run(n) for n in names]
        for name, st, files in results:
            status[name] = st
            writer.files.extend(files)
    manifest = {
        "schema": REPORT_SCHEMA,
        "config": config.to_dict(),
        "eligible_subjects": len(frame),
        "analyses": status,
        "files": sorted(writer.files + ["manifest.json"]),
    }
    writer.json("manifest.json", manifest)
    return ReportBundle(config.output_dir, sorted(writer.files), status, exclusions)


def _table1(frame, config, writer):
    rows = build_table1(frame, config.severity_thresholds())
    buf = io.StringIO()
    write_table1(rows, buf)
    writer.text("table1.csv", buf.getvalue())
    return {"rows": len(rows)}
