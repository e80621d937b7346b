"""Acceptance criteria, one test each.

Every test records a ``criterion N: PASS|FAIL`` line (shown in the terminal
summary) and then asserts the criterion at its stated tolerance.
"""

from dataclasses import replace
from fractions import Fraction
import inspect
import io
import math
import os
from pathlib import Path
import time

from hypothesis import given
import numpy as np
import pytest

from bacsurv.ascvd import ascvd_score, compare_with_oracle, read_oracle_profiles
from bacsurv.report import RunConfig, run_pipeline
from bacsurv.simulate import PAPER_HAZARD_RATIOS, PAPER_PREVALENCE, SimConfig, simulate_cohort, write_raw_tables
from bacsurv.stats import chi_square, kruskal_wallis, one_way_anova, welch_t
from bacsurv.survival import CoxSpec, MonotoneLikelihoodError, PartialLikelihood, cox_fit, product_limit
from bacsurv.thresholds import SweepConfig, sweep_thresholds

import conftest
import test_ascvd
import test_bac
import test_cohort
import test_cox
import test_km
import test_logrank
import test_simulate
import test_stats
import test_thresholds

ORACLE = Path(__file__).parent / "data" / "ascvd_oracle.csv"


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def grid_loglik(t, e, X, B, ties):
    """Partial log-likelihood at each row of ``B`` (direct sum over event times)."""
    eta = B @ X.T
    w = np.exp(eta)
    ll = np.zeros(B.shape[0])
    for time_ in np.unique(t[e]):
        dead = (t == time_) & e
        risk = t >= time_
        d = dead.sum()
        ll += eta[:, dead].sum(axis=1)
        r = w[:, risk].sum(axis=1)
        dsum = w[:, dead].sum(axis=1)
        for l in range(d):
            ll -= np.log(r - (l / d if ties == "efron" else 0.0) * dsum)
    return ll


def grid_argmax(t, e, X, ties):
    """Maximizer on the 1e-4 grid over [-5, 5]^p.

    One covariate: the full grid. Two covariates: the partial likelihood is
    concave, so a 0.05 grid over the box is refined at 1e-3 and then at 1e-4
    in shrinking windows around the running maximizer.
    """
    if X.shape[1] == 1:
        g = np.round(np.arange(-50000, 50001) * 1e-4, 10)[:, None]
        return g[np.argmax(grid_loglik(t, e, X, g, ties))]
    best = np.zeros(2)
    for step, half in ((0.05, 100), (1e-3, 100), (1e-4, 20)):
        c = np.arange(-half, half + 1) * step
        B = best + np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1).reshape(-1, 2)
        B = B[np.all(np.abs(B) <= 5 + 1e-12, axis=1)]
        best = B[np.argmax(grid_loglik(t, e, X, B, ties))]
    return best


def test_criterion_1_cox_desk_scale():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_beta, worst_grad, cohorts = 0.0, 0.0, 0
    while cohorts < 30:
        n = int(rng.integers(8, 21))
        p = int(rng.integers(1, 3))
        ties = "efron" if cohorts % 3 == 0 else "breslow"
        t, e, X = conftest.random_survival(rng, n, p, tie_prone=ties == "efron")
        try:
            fit = cox_fit(t, e, X, CoxSpec(tie_method=ties))
        except MonotoneLikelihoodError:
            continue
        if not fit.converged or np.any(np.abs(fit.coefficients) > 4.9):
            continue
        ref = grid_argmax(t, e, X, ties)
        worst_beta = max(worst_beta, float(np.max(np.abs(fit.coefficients - ref))))
        pl = PartialLikelihood(t, e, X, ties)
        for beta in rng.normal(0, 1, size=(3, p)):
            _, score, _ = pl.evaluate(beta, derivatives=1)
            fd = np.empty(p)
            for j in range(p):
                h = np.zeros(p)
                h[j] = 1e-5
                fd[j] = (pl.evaluate(beta + h, 0)[0] - pl.evaluate(beta - h, 0)[0]) / 2e-5
            worst_grad = max(worst_grad, float(np.linalg.norm(score - fd) / np.linalg.norm(score)))
        cohorts += 1
    elapsed = time.perf_counter() - start
    ok = worst_beta < 1e-3 and worst_grad < 1e-6 and elapsed < 10
    detail = f"{cohorts} cohorts, max |dbeta| {worst_beta:.2e}, max grad rel err {worst_grad:.2e}, {elapsed:.1f} s"
    assert record(1, ok, detail), detail


def test_criterion_2_closed_form():
    fit = cox_fit([1, 2, 3], [1, 1, 1], [1, 0, 1])
    err = abs(fit.coefficients[0] + 0.5 * math.log(2))
    detail = f"beta {fit.coefficients[0]:.10f}, |error| {err:.2e}"
    assert record(2, fit.converged and err < 1e-6, detail), detail


def test_criterion_3_km_exactness():
    curve = product_limit([1, 2, 3], [1, 0, 1])
    # hand product-limit: (2/3) then (2/3) x (0/1)
    exact = curve.survival_at(1) == float(Fraction(2, 3)) and curve.survival_at(3) == float(Fraction(2, 3) * 0)
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 200))
        t = rng.integers(1, 50, size=n).astype(float)
        curve = product_limit(t, np.ones(n, bool))
        empirical = np.array([np.count_nonzero(t > s) / n for s in curve.time_points])
        mismatches += not np.array_equal(curve.survival, empirical)
    ok = exact and mismatches == 0
    detail = f"3-subject rational match {exact}, uncensored cohorts differing from empirical: {mismatches}/100"
    assert record(3, ok, detail), detail


def test_criterion_4_calibrated_recovery():
    truth = np.log(PAPER_HAZARD_RATIOS[1:])
    covered = np.zeros(3, int)
    ordered = 0
    estimates = []
    start = time.perf_counter()
    for seed in range(20):
        c = simulate_cohort(SimConfig(n_subjects=50_000, seed=seed))
        f, sev = c.frame, c.severity
        X = np.column_stack([(sev == k).astype(float) for k in (1, 2, 3)])
        fit = cox_fit(f["mace_days"], f["mace_event"], X)
        lo, hi = np.log(fit.ci_95).T
        estimates.append(fit.coefficients)
        covered += (lo <= truth) & (truth <= hi)
        ordered += bool(np.all(np.diff(fit.coefficients) > 0))
    elapsed = time.perf_counter() - start
    ok = np.all(covered >= 18) and ordered == 20 and elapsed < 120
    detail = f"CI coverage (mild, moderate, severe) {covered.tolist()}/20, ordered {ordered}/20, {elapsed:.0f} s"
    bias = np.mean(estimates, axis=0) - truth
    detail += f"; mean log-HR bias {np.round(bias, 4).tolist()}"
    assert record(4, ok, detail), detail


def sweep_hits(n, prevalence, seeds):
    hits = []
    for seed in seeds:
        c = simulate_cohort(SimConfig(n_subjects=n, seed=seed, severity_prevalence=prevalence,
                                      true_log_hr=(0.0, math.log(1.2), math.log(1.5), math.log(2.2))))
        f = c.frame
        r = sweep_thresholds(f["bac_area_mm2"], f["mace_days"], f["mace_event"], SweepConfig())
        hits.append(abs(r.selected[0] - 10) <= 5 and abs(r.selected[1] - 40) <= 5)
    return hits


def test_criterion_5_sweep_recovery():
    # balanced classes so both change-points carry information
    hits = sweep_hits(100_000, (0.25,) * 4, range(20))
    ok = sum(hits) >= 18
    missed = [s for s, h in enumerate(hits) if not h]
    detail = f"selected within 5 mm2 of (10, 40) in {sum(hits)}/20 replicates (n=100000, missed seeds {missed})"
    # informational: at the published prevalences the severe class is small
    paper = sweep_hits(100_000, PAPER_PREVALENCE, range(5))
    detail += f"; info: published prevalences {sum(paper)}/5"
    assert record(5, ok, detail), detail


def test_criterion_6_ascvd_oracle():
    with open(ORACLE, newline="") as fh:
        summary = compare_with_oracle(read_oracle_profiles(fh))
    n, r, diff = summary["n_profiles"], summary["pearson_r"], summary["max_abs_diff_pct_points"]
    ok = n >= 20 and r >= 0.99 and diff <= 0.5
    detail = f"{n} pinned profiles (need >= 20), R {r:.4f}, max diff {diff:.2f} pct points"
    assert record(6, ok, detail), detail


def property_tests():
    modules = (test_bac, test_cohort, test_km, test_logrank, test_cox, test_ascvd, test_thresholds, test_stats,
               test_simulate)
    for mod in modules:
        for name, fn in sorted(vars(mod).items()):
            if name.startswith("test_") and getattr(fn, "is_hypothesis_test", False):
                yield f"{mod.__name__}.{name}", fn


@given(p=test_ascvd.profiles)
def ascvd_strictly_increasing_in_age(p):
    risks = [ascvd_score(replace(p, age=a)) for a in np.linspace(40, 79, 14)]
    assert np.all(np.diff(risks) > 0)


def test_criterion_7_statistical_oracles():
    # direct formulas for the pinned examples
    pinned = {
        "chi-square": (chi_square([[20, 10], [10, 20]]).statistic, 4 * 25 / 15),
        "welch t": (welch_t([1, 2, 3], [4, 5, 6]).statistic, -3 / math.sqrt(1 / 3 + 1 / 3)),
        "anova F": (one_way_anova([[1, 2], [5, 6], [9, 10]]).statistic, (64 / 2) / (1.5 / 3)),
        "kruskal H": (kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]]).statistic,
                      12 / (9 * 10) * (6**2 + 15**2 + 24**2) / 3 - 3 * 10),
    }
    bad_pins = [k for k, (got, want) in pinned.items() if abs(got - want) > 1e-9]

    failed, passed = [], 0
    cases = list(property_tests())
    cases.append(("risk_scores: strictly increasing in age (all sexes)", ascvd_strictly_increasing_in_age))
    for name, fn in cases:
        if inspect.signature(fn).parameters:
            failed.append(f"{name} (needs arguments)")
            continue
        try:
            fn()
            passed += 1
        except Exception as exc:
            failed.append(f"{name} ({type(exc).__name__})")
    ok = not bad_pins and not failed
    detail = f"pinned mismatches {bad_pins or 'none'}; {passed}/{len(cases)} property checks pass"
    if failed:
        detail += f"; failing: {', '.join(failed)}"
    assert record(7, ok, detail), detail


def write_inputs(directory, n, seed):
    os.makedirs(directory, exist_ok=True)
    cohort = simulate_cohort(SimConfig(n_subjects=n, seed=seed, prior_event_rate=0.02, lab_missing_rate=0.05))
    subjects, diagnoses = os.path.join(directory, "subjects.csv"), os.path.join(directory, "diagnoses.csv")
    with open(subjects, "w", newline="") as s, open(diagnoses, "w", newline="") as d:
        write_raw_tables(cohort, s, d)
    return subjects, diagnoses


def machine_readable(root):
    out = {}
    for base, _, files in os.walk(root):
        for name in files:
            if name.endswith((".csv", ".json")):
                path = os.path.join(base, name)
                with open(path, "rb") as fh:
                    out[os.path.relpath(path, root)] = fh.read()
    return out


def test_criterion_8_determinism(tmp_path):
    subjects, diagnoses = write_inputs(tmp_path / "in", 20_000, seed=8)
    runs = []
    for label in ("a", "b"):
        bundle = run_pipeline(RunConfig(subjects_path=subjects, diagnoses_path=diagnoses,
                                        output_dir=str(tmp_path / label), seed=8))
        assert bundle.ok, bundle.status
        runs.append(machine_readable(tmp_path / label))
    a, b = runs
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = bool(a) and not differing
    detail = f"{len(a)} machine-readable files, differing: {differing or 'none'}"
    assert record(8, ok, detail), detail


def test_criterion_9_scale(tmp_path):
    subjects, diagnoses = write_inputs(tmp_path / "in", 100_000, seed=9)
    start = time.perf_counter()
    bundle = run_pipeline(RunConfig(subjects_path=subjects, diagnoses_path=diagnoses,
                                    output_dir=str(tmp_path / "out"), seed=9))
    elapsed = time.perf_counter() - start
    ok = bundle.ok and elapsed < 60
    detail = f"ingest through report on 100000 subjects: {elapsed:.1f} s on {os.cpu_count()} CPU(s), ok={bundle.ok}"
    assert record(9, ok, detail), detail
