"""``bacsurv`` command line.

Exit codes: 0 success, 1 analysis failure, 2 input or schema error.
"""

import argparse
import contextlib
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .ascvd import compare_with_oracle, read_oracle_profiles, score_frame, categorize_risk
from .bac import SeverityClass, SeverityThresholds, classify_severity_array
from .cohort import Endpoint, SchemaError, assemble_cohort, frame_from_table, load_schema, parse_cohort, parse_diagnoses, write_cohort_table
from .plots import StepSeries, km_svg, scatter_svg, sweep_svg
from .report import ADJUSTMENT_SETS, ConfigError, RunConfig, cox_cell, dumps, run_pipeline
from .simulate import SimConfig, simulate_cohort, write_raw_tables
from .survival import CoxFitError, UndefinedStatisticError, kaplan_meier, logrank_test
from .table1 import build_table1, write_table1
from .thresholds import InfeasibleSweepError, SweepConfig, sweep_thresholds, write_selection, write_trace

EXIT_OK, EXIT_ANALYSIS, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _thresholds(text):
    try:
        parts = [float(x) for x in text.split(",")]
        return SeverityThresholds(*parts)
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"thresholds must be 'noise,mild,moderate': {exc}") from None


def _endpoint(text):
    aliases = {e.column_prefix: e for e in Endpoint}
    try:
        return aliases.get(text.lower()) or Endpoint(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown endpoint {text!r}") from None


def _floats(text):
    return tuple(float(x) for x in text.split(","))


def _race_map(items):
    mapping = {}
    for item in items or ():
        if "=" not in item:
            raise InputError(f"race mapping {item!r} must look like Race=group")
        k, v = item.split("=", 1)
        mapping[k] = v
    return mapping


def _open_out(path):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="\n")


def _load_frame(path):
    with open(path, newline="") as fh:
        return frame_from_table(fh)


def _groups(frame, by, thresholds):
    bac = frame["bac_area_mm2"].to_numpy(dtype=float)
    sev = classify_severity_array(bac, thresholds)
    if by == "severity":
        names = np.array([k.label for k in SeverityClass], dtype=object)
        return names[sev], [k.label for k in SeverityClass]
    names = np.array(["No BAC", "Any BAC"], dtype=object)
    return names[(sev > 0).astype(int)], ["No BAC", "Any BAC"]


def _age_mask(frame, lo, hi):
    age = frame["age_at_index"].to_numpy(dtype=float)
    m = np.ones(age.size, dtype=bool)
    if lo is not None:
        m &= age >= lo
    if hi is not None:
        m &= age < hi
    return m


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args):
    schema = load_schema(args.schema) if args.schema else None
    with open(args.subjects, newline="") as fh:
        subjects = parse_cohort(fh, schema, delimiter=args.delimiter)
    with open(args.diagnoses, newline="") as fh:
        diagnoses = parse_diagnoses(fh, delimiter=args.delimiter)
    cohort = assemble_cohort(subjects, diagnoses, args.min_followup_years)
    with _open_out(args.out) as fh:
        write_cohort_table(cohort.to_frame(), fh)
    report = cohort.report.to_dict()
    report["row_errors"] = [
        {"line": e.line, "subject_id": e.subject_id, "reason": e.reason, "message": e.message} for e in subjects.errors
    ]
    with _open_out(args.exclusions) as fh:
        fh.write(dumps(report))
    return EXIT_OK


def cmd_table1(args):
    frame = _load_frame(args.cohort)
    with _open_out(args.out) as fh:
        write_table1(build_table1(frame, args.thresholds), fh)
    return EXIT_OK


def cmd_km(args):
    frame = _load_frame(args.cohort)
    m = _age_mask(frame, args.age_min, args.age_max)
    if not m.any():
        raise InputError("no subjects in the selected age range")
    p = args.endpoint.column_prefix
    groups, order = _groups(frame, args.by, args.thresholds)
    present = [g for g in order if np.any(groups[m] == g)]
    curves = kaplan_meier(frame[f"{p}_days"].to_numpy()[m], frame[f"{p}_event"].to_numpy()[m], groups[m], labels=present)
    cols = ["stratum", "time", "n_at_risk", "n_events", "n_censored", "survival", "variance", "ci_lower", "ci_upper"]
    with _open_out(args.out + ".csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for curve in curves.values():
            for r in curve.rows():
                w.writerow([f"{r[c]:.12g}" if isinstance(r[c], float) else r[c] for c in cols])
    ticks = _floats(args.ticks)
    series = [StepSeries.from_curve(c, risk_ticks=ticks) for c in curves.values()]
    with _open_out(args.out + ".svg") as fh:
        fh.write(km_svg(series, title=args.title or f"{args.endpoint.value} by {args.by}"))
    return EXIT_OK


def cmd_logrank(args):
    frame = _load_frame(args.cohort)
    m = _age_mask(frame, args.age_min, args.age_max)
    p = args.endpoint.column_prefix
    groups, _ = _groups(frame, args.by, args.thresholds)
    try:
        result = logrank_test(frame[f"{p}_days"].to_numpy()[m], frame[f"{p}_event"].to_numpy()[m], groups[m])
    except (UndefinedStatisticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    with _open_out(args.out) as fh:
        fh.write(dumps(result.to_dict()))
    return EXIT_OK


def cmd_cox(args):
    frame = _load_frame(args.cohort)
    config = RunConfig(cohort_path=args.cohort, thresholds=args.thresholds.edges, tie_method=args.ties)
    cells = []
    for ep in args.endpoint or list(Endpoint):
        for exposure in args.exposure or ("categorical",):
            cells.append(cox_cell(frame, ep, exposure, args.adjust, ADJUSTMENT_SETS[args.adjust], config))
    with _open_out(args.out) as fh:
        fh.write(dumps({"schema": "bacsurv.cox/1", "adjustment_set": args.adjust, "cells": cells}))
    return EXIT_OK if all(c["converged"] for c in cells) else EXIT_ANALYSIS


def cmd_ascvd(args):
    frame = _load_frame(args.cohort)
    mapping = _race_map(args.race_map) or {"Black": "african_american", "White": "white_or_other"}
    risk, reason = score_frame(frame, mapping)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "ascvd_risk", "category", "not_scored_reason"])
        for sid, r, why in zip(frame["subject_id"], risk, reason):
            ok = math.isfinite(r)
            w.writerow([sid, f"{r:.12g}" if ok else "", categorize_risk(r).value if ok else "", why])
    return EXIT_OK


def cmd_ascvd_validate(args):
    with open(args.oracle, newline="") as fh:
        try:
            profiles = read_oracle_profiles(fh)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    summary = compare_with_oracle(profiles)
    os.makedirs(args.out_dir, exist_ok=True)
    with _open_out(os.path.join(args.out_dir, "ascvd_validation.csv")) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["profile", "engine_pct", "oracle_pct", "abs_diff_pct_points"])
        for i, (e, o) in enumerate(zip(summary["engine_pct"], summary["oracle_pct"])):
            w.writerow([i, f"{e:.6f}", f"{o:.6f}", f"{abs(e - o):.6f}"])
    brief = {k: v for k, v in summary.items() if k not in ("engine_pct", "oracle_pct")}
    with _open_out(os.path.join(args.out_dir, "ascvd_validation.json")) as fh:
        fh.write(dumps(brief))
    with _open_out(os.path.join(args.out_dir, "ascvd_validation.svg")) as fh:
        fh.write(scatter_svg(summary["oracle_pct"], summary["engine_pct"], "ASCVD engine vs reference (%)",
                             "reference risk (%)", "engine risk (%)"))
    print(dumps(brief), end="")
    return EXIT_OK


def cmd_sweep(args):
    frame = _load_frame(args.cohort)
    config = SweepConfig(
        grid_start=args.grid_start, grid_end=args.grid_end, grid_step=args.grid_step,
        min_group_size=args.min_group_size, objective=args.objective, mode=args.mode, tie_method=args.ties,
    )
    try:
        result = sweep_thresholds(frame["bac_area_mm2"], frame["mace_days"], frame["mace_event"], config)
    except InfeasibleSweepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    os.makedirs(args.out_dir, exist_ok=True)
    with _open_out(os.path.join(args.out_dir, "trace.csv")) as fh:
        write_trace(result, fh)
    with _open_out(os.path.join(args.out_dir, "selected.json")) as fh:
        write_selection(result, fh)
    with _open_out(os.path.join(args.out_dir, "heatmap.svg")) as fh:
        fh.write(sweep_svg(result.trace, result.selected))
    print(json.dumps({"selected": list(result.selected), "non_separating": result.non_separating}))
    return EXIT_OK


def cmd_simulate(args):
    kwargs = {"n_subjects": args.n, "seed": args.seed, "baseline_hazard": args.baseline_hazard,
              "lab_missing_rate": args.lab_missing_rate, "prior_event_rate": args.prior_event_rate}
    if args.prevalence:
        kwargs["severity_prevalence"] = _floats(args.prevalence)
    if args.hr:
        kwargs["true_log_hr"] = (0.0,) + tuple(math.log(h) for h in _floats(args.hr))
    if args.censoring:
        kwargs["censoring"] = _floats(args.censoring)
    try:
        config = SimConfig(**kwargs)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    cohort = simulate_cohort(config)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "subjects.csv"), "w", newline="") as s, \
            open(os.path.join(args.out_dir, "diagnoses.csv"), "w", newline="") as d:
        write_raw_tables(cohort, s, d)
    with open(os.path.join(args.out_dir, "cohort.csv"), "w", newline="") as fh:
        eligible = cohort.frame[~cohort.frame["prior_event"].to_numpy()]
        write_cohort_table(eligible, fh, extra_columns=("true_severity",))
    with open(os.path.join(args.out_dir, "ground_truth.json"), "w") as fh:
        fh.write(dumps(config.to_dict()))
    return EXIT_OK


def cmd_report(args):
    overrides = {
        "subjects_path": args.subjects, "diagnoses_path": args.diagnoses, "cohort_path": args.cohort,
        "output_dir": args.out_dir, "seed": args.seed, "n_jobs": args.n_jobs,
    }
    if args.no_sweep:
        overrides["run_sweep"] = False
    if args.config:
        config = RunConfig.from_file(args.config, **overrides)
    else:
        config = RunConfig(**{k: v for k, v in overrides.items() if v is not None})
    bundle = run_pipeline(config)
    for name, st in sorted(bundle.status.items()):
        print(f"{name}: {st['status']}" + (f" ({st['detail']})" if st["status"] != "ok" else ""))
    return EXIT_OK if bundle.ok else EXIT_ANALYSIS


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="bacsurv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def cohort_arg(p):
        p.add_argument("--cohort", required=True, help="canonical cohort table (output of ingest)")

    def thresholds_arg(p):
        p.add_argument("--thresholds", type=_thresholds, default=SeverityThresholds(),
                       help="noise floor, mild and moderate upper bounds in mm2 (default 2,10,40)")

    p = sub.add_parser("ingest", help="parse subject and diagnosis tables into the canonical cohort table")
    p.add_argument("--subjects", required=True)
    p.add_argument("--diagnoses", required=True)
    p.add_argument("--schema", help="JSON column mapping (canonical name -> file column)")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--min-followup-years", type=float, default=5.0)
    p.add_argument("--out", default="-")
    p.add_argument("--exclusions", default="exclusions.json")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("table1", help="baseline characteristics table")
    cohort_arg(p)
    thresholds_arg(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_table1)

    for name, func, helptext in (("km", cmd_km, "Kaplan-Meier curves (CSV + SVG)"),
                                 ("logrank", cmd_logrank, "k-sample log-rank test (JSON)")):
        p = sub.add_parser(name, help=helptext)
        cohort_arg(p)
        thresholds_arg(p)
        p.add_argument("--endpoint", type=_endpoint, default=Endpoint.CompositeMACE)
        p.add_argument("--by", choices=("severity", "any-bac"), default="severity")
        p.add_argument("--age-min", type=float)
        p.add_argument("--age-max", type=float, help="exclusive upper age bound")
        if name == "km":
            p.add_argument("--out", required=True, help="output path prefix; writes <prefix>.csv and <prefix>.svg")
            p.add_argument("--ticks", default="0,2,4,6,8,10,12,14", help="at-risk table times in years")
            p.add_argument("--title")
        else:
            p.add_argument("--out", default="-")
        p.set_defaults(func=func)

    p = sub.add_parser("cox", help="Cox proportional-hazards fits (JSON)")
    cohort_arg(p)
    thresholds_arg(p)
    p.add_argument("--endpoint", type=_endpoint, action="append")
    p.add_argument("--exposure", choices=("categorical", "continuous"), action="append")
    p.add_argument("--adjust", choices=sorted(ADJUSTMENT_SETS), default="unadjusted")
    p.add_argument("--ties", choices=("efron", "breslow"), default="efron")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_cox)

    p = sub.add_parser("ascvd", help="10-year ASCVD risk and category per subject")
    cohort_arg(p)
    p.add_argument("--race-map", action="append", metavar="RACE=GROUP",
                   help="race label to equation group; default Black=african_american, White=white_or_other")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_ascvd)

    p = sub.add_parser("ascvd-validate", help="engine vs pinned reference risks (calibration scatter)")
    p.add_argument("--oracle", required=True, help="CSV of profiles with oracle_risk_pct")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ascvd_validate)

    p = sub.add_parser("sweep", help="BAC threshold grid search")
    cohort_arg(p)
    defaults = SweepConfig()
    p.add_argument("--grid-start", type=float, default=defaults.grid_start)
    p.add_argument("--grid-end", type=float, default=defaults.grid_end)
    p.add_argument("--grid-step", type=float, default=defaults.grid_step)
    p.add_argument("--min-group-size", type=int, default=defaults.min_group_size)
    p.add_argument("--objective", choices=("likelihood_ratio", "min_adjacent_diff", "sum_adjacent_diff"),
                   default=defaults.objective)
    p.add_argument("--mode", choices=("joint", "sequential"), default=defaults.mode)
    p.add_argument("--ties", choices=("efron", "breslow"), default=defaults.tie_method)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="synthetic cohort with known hazard ratios")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prevalence", help="four comma-separated severity prevalences")
    p.add_argument("--hr", help="three comma-separated true HRs (mild, moderate, severe)")
    p.add_argument("--baseline-hazard", type=float, default=0.01)
    p.add_argument("--censoring", help="uniform follow-up window in years, e.g. 5,15")
    p.add_argument("--lab-missing-rate", type=float, default=0.0)
    p.add_argument("--prior-event-rate", type=float, default=0.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="run the full pipeline")
    p.add_argument("--config", help="JSON run configuration; flags below override it")
    p.add_argument("--subjects")
    p.add_argument("--diagnoses")
    p.add_argument("--cohort")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--no-sweep", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, SchemaError, ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CoxFitError, InfeasibleSweepError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
