"""Baseline characteristics by BAC severity and by MACE status.

Continuous variables are compared with one-way ANOVA across severity groups
and Welch's t-test between MACE groups, categorical variables with the
chi-square test, and median follow-up with Kruskal-Wallis. Labs are
summarized over subjects with a recorded value only.
"""

from dataclasses import dataclass
import csv

import numpy as np

from .bac import DEFAULT_THRESHOLDS, SeverityClass, classify_severity_array
from .cohort import DAYS_PER_YEAR, RACES
from .stats import chi_square, kruskal_wallis, one_way_anova, welch_t
from .survival.cox import format_p_value

SEVERITY_LABELS = ("Zero", "Mild", "Moderate", "Severe")
COLUMNS = ("variable",) + SEVERITY_LABELS + ("p_severity", "No Event", "Event", "p_mace", "All")


@dataclass(frozen=True)
class Variable:
    """One Table 1 row: ``kind`` is ``continuous``, ``binary``, ``categorical`` or ``median_followup``."""

    column: str
    label: str
    kind: str
    complete_case: bool = False


DEFAULT_VARIABLES = (
    Variable("age_at_index", "Age, y (std)", "continuous"),
    Variable("race", "Race (%)", "categorical"),
    Variable("hispanic", "Hispanic (%)", "binary"),
    Variable("mace_days", "Median time to follow up, y", "median_followup"),
    Variable("diabetes", "Diabetes (%)", "binary", True),
    Variable("on_antihypertensive", "Antihypertensives (%)", "binary", True),
    Variable("on_statin", "Statins (%)", "binary", True),
    Variable("smoking", "Smoking (%)", "binary", True),
    Variable("total_cholesterol", "Total Cholesterol, mg/dL (std)", "continuous", True),
    Variable("hdl", "HDL, mg/dL (std)", "continuous", True),
    Variable("systolic_bp", "Systolic Blood Pressure (mmHg) (std)", "continuous", True),
    Variable("bmi", "BMI, kg/m2 (std)", "continuous", True),
    Variable("egfr", "eGFR, mL/min/1.73m2 (std)", "continuous", True),
)


def _p(test, *args):
    try:
        return format_p_value(test(*args).p_value)
    except ValueError:
        return "NA"


def _mean_sd(x):
    if x.size == 0:
        return "NA"
    sd = x.std(ddof=1) if x.size > 1 else float("nan")
    return f"{x.mean():.1f} ({sd:.1f})"


def _pct(x):
    return "NA" if x.size == 0 else f"{100.0 * x.mean():.1f}"


def build_table1(frame, thresholds=DEFAULT_THRESHOLDS, variables=DEFAULT_VARIABLES):
    """Return Table 1 as a list of row dicts keyed by :data:`COLUMNS`.

    ``frame`` is a canonical cohort frame (see :func:`bacsurv.cohort.cohort_frame`).
    """
    sev = classify_severity_array(frame["bac_area_mm2"].to_numpy(dtype=float), thresholds)
    event = frame["mace_event"].to_numpy().astype(bool)
    n = len(frame)
    sev_masks = [sev == int(k) for k in SeverityClass]
    mace_masks = [~event, event]
    all_masks = sev_masks + mace_masks + [np.ones(n, dtype=bool)]

    def header(kind):
        row = {"variable": "N" if kind == "n" else "%"}
        for label, m in zip(SEVERITY_LABELS + ("No Event", "Event", "All"), all_masks):
            row[label] = str(int(m.sum())) if kind == "n" else (f"{100.0 * m.sum() / n:.1f}" if n else "NA")
        row["p_severity"] = row["p_mace"] = ""
        return row

    rows = [header("n"), header("pct")]
    for var in variables:
        raw = frame[var.column].to_numpy()
        if var.kind == "categorical":
            labels = [r for r in RACES if np.any(raw == r)]
            row = {"variable": var.label, **{c: "" for c in COLUMNS[1:]}}
            row["p_severity"] = _p(chi_square, _crosstab(raw, labels, sev_masks))
            row["p_mace"] = _p(chi_square, _crosstab(raw, labels, mace_masks))
            rows.append(row)
            for lab in labels:
                sub = {"variable": f"  {lab}", "p_severity": "", "p_mace": ""}
                for col, m in zip(SEVERITY_LABELS + ("No Event", "Event", "All"), all_masks):
                    sub[col] = _pct((raw[m] == lab).astype(float))
                rows.append(sub)
            continue
        values = np.asarray(raw, dtype=float)
        present = ~np.isnan(values) if var.complete_case or var.kind == "continuous" else np.ones(n, bool)
        if var.kind == "median_followup":
            values = values / DAYS_PER_YEAR
        row = {"variable": var.label}
        for col, m in zip(SEVERITY_LABELS + ("No Event", "Event", "All"), all_masks):
            x = values[m & present]
            if var.kind == "continuous":
                row[col] = _mean_sd(x)
            elif var.kind == "binary":
                row[col] = _pct(x)
            else:
                row[col] = "NA" if x.size == 0 else f"{np.median(x):.1f}"
        groups_sev = [values[m & present] for m in sev_masks]
        groups_sev = [g for g in groups_sev if g.size]
        groups_mace = [values[m & present] for m in mace_masks]
        if var.kind == "continuous":
            row["p_severity"] = _p(one_way_anova, groups_sev)
            row["p_mace"] = _p(welch_t, *groups_mace)
        elif var.kind == "binary":
            row["p_severity"] = _p(chi_square, _binary_table(values, present, sev_masks))
            row["p_mace"] = _p(chi_square, _binary_table(values, present, mace_masks))
        else:
            row["p_severity"] = _p(kruskal_wallis, groups_sev)
            row["p_mace"] = _p(kruskal_wallis, groups_mace)
        rows.append(row)
    return rows


def _crosstab(values, labels, masks):
    return np.array([[np.sum(m & (values == lab)) for lab in labels] for m in masks if m.any()])


def _binary_table(values, present, masks):
    return np.array([[np.sum(m & present & (values == 1)), np.sum(m & present & (values == 0))] for m in masks if (m & present).any()])


def write_table1(rows, stream):
    w = csv.DictWriter(stream, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
