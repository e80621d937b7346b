"""Grid search for the BAC cut-points separating mild, moderate and severe.

Every ordered pair ``(t1, t2)`` on the grid defines four groups
(``< noise_floor``, ``[noise_floor, t1)``, ``[t1, t2)``, ``>= t2``). A
univariate categorical Cox model is fitted per pair and the pair maximizing
the configured objective is selected.

Because the groups are unions of grid bins, the partial likelihood for any
candidate only needs per-bin risk-set and event counts at each event time.
:class:`GroupedCoxFitter` builds those counts once and then runs Newton's
method for a whole batch of candidates at the same time.
"""

from dataclasses import dataclass, field
import csv
import json
import math

import numpy as np

from ._special import chi2_sf
from .bac import classify_severity_array
from .stats import welch_t
from .survival.cox import TIE_METHODS

OBJECTIVES = ("min_adjacent_diff", "sum_adjacent_diff", "likelihood_ratio")
GROUP_LABELS = ("No BAC", "Mild", "Moderate", "Severe")


class InfeasibleSweepError(ValueError):
    """No candidate grouping satisfies the group-size constraint."""


@dataclass(frozen=True)
class SweepConfig:
    """Grid and selection settings.

    ``mode="sequential"`` first picks ``t1`` from three-group models
    (No BAC, ``[noise_floor, t1)``, ``>= t1``) and then ``t2 > t1`` with
    ``t1`` held fixed; ``mode="joint"`` searches all pairs.

    ``objective`` names the selection strategy: ``"likelihood_ratio"``
    (grouped-model LR statistic against the null), ``"min_adjacent_diff"``
    (smallest HR gap between adjacent groups) or ``"sum_adjacent_diff"``.
    Breslow ties are the default here because candidate ranking is
    insensitive to the tie approximation and Breslow is much cheaper.
    """

    grid_start: float = 5.0
    grid_end: float = 700.0
    grid_step: float = 5.0
    noise_floor: float = 2.0
    min_group_size: int = 50
    objective: str = "likelihood_ratio"
    mode: str = "joint"
    tie_method: str = "breslow"
    alpha: float = 0.05
    max_iterations: int = 50
    chunk_size: int = 256

    def __post_init__(self):
        if not 0 < self.grid_start < self.grid_end:
            raise ValueError("grid requires 0 < grid_start < grid_end")
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")
        if not self.noise_floor < self.grid_start:
            raise ValueError("grid_start must exceed the noise floor")
        if self.min_group_size < 1:
            raise ValueError("min_group_size must be >= 1")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.mode not in ("joint", "sequential"):
            raise ValueError("mode must be 'joint' or 'sequential'")
        if self.tie_method not in TIE_METHODS:
            raise ValueError(f"tie_method must be one of {TIE_METHODS}")

    def grid(self):
        n = int(math.floor((self.grid_end - self.grid_start) / self.grid_step + 1e-9))
        return np.round(self.grid_start + self.grid_step * np.arange(n + 1), 10)


@dataclass
class GroupedFits:
    """Batch result of :meth:`GroupedCoxFitter.fit` (one row per candidate)."""

    coefficients: np.ndarray  # (P, K-1), group 0 is the reference
    standard_errors: np.ndarray
    log_likelihood: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray


class GroupedCoxFitter:
    """Cox fits for groupings that are unions of contiguous bins.

    Parameters
    ----------
    durations, events : array_like
        Follow-up times and event indicators.
    bins : array_like of int
        Bin index of each subject, ``0 .. n_bins - 1``.
    """

    def __init__(self, durations, events, bins, n_bins, tie_method="efron"):
        durations = np.asarray(durations, dtype=float)
        events = np.asarray(events).astype(bool)
        bins = np.asarray(bins, dtype=np.int64)
        self.n_bins = int(n_bins)
        self.bin_sizes = np.bincount(bins, minlength=self.n_bins)
        self.size_prefix = np.concatenate([[0], np.cumsum(self.bin_sizes)])
        times = np.unique(durations[events])
        if times.size == 0:
            raise ValueError("no events; the sweep needs at least one event")
        J = times.size
        # at-risk at event time j: duration >= times[j]
        pos = np.searchsorted(times, durations, side="right")
        leave = np.zeros((J + 1, self.n_bins))
        np.add.at(leave, (pos, bins), 1.0)
        at_risk = np.cumsum(leave[::-1], axis=0)[::-1][1:]
        ev_counts = np.zeros((J, self.n_bins))
        ej = np.searchsorted(times, durations[events])
        np.add.at(ev_counts, (ej, bins[events]), 1.0)
        d = ev_counts.sum(axis=1)
        if tie_method == "efron":
            d_int = d.astype(np.int64)
            slot_time = np.repeat(np.arange(J), d_int)
            starts = np.concatenate([[0], np.cumsum(d_int)[:-1]])
            frac = (np.arange(slot_time.size) - np.repeat(starts, d_int)) / d[slot_time]
            self._weight = None
        else:
            slot_time = np.arange(J)
            frac = np.zeros(J)
            self._weight = d
        # row c holds sum over bins < c of (at risk - frac * events), one column per slot
        terms = at_risk[slot_time] - frac[:, None] * ev_counts[slot_time]
        self._prefix = np.ascontiguousarray(np.vstack([np.zeros(slot_time.size), np.cumsum(terms.T, axis=0)]))
        self._events_per_bin_prefix = np.concatenate([[0.0], np.cumsum(ev_counts.sum(axis=0))])
        self.n_events = int(events.sum())

    def group_sizes(self, cuts):
        """Subject counts per group for cut arrays of shape ``(P, K-1)``."""
        return np.diff(self.size_prefix[self._edges(cuts)], axis=1)

    def group_events(self, cuts):
        return np.diff(self._events_per_bin_prefix[self._edges(cuts)], axis=1)

    def _edges(self, cuts):
        cuts = np.atleast_2d(np.asarray(cuts, dtype=np.int64))
        P = cuts.shape[0]
        return np.hstack([np.zeros((P, 1), dtype=np.int64), cuts, np.full((P, 1), self.n_bins)])

    def _slot_terms(self, cuts):
        """Per-group ``risk - frac * events`` at every slot: ``(K, P, S)``."""
        edges = self._edges(cuts)
        rows = self._prefix[edges]  # (P, K+1, S)
        return np.ascontiguousarray(np.diff(rows, axis=1).transpose(1, 0, 2))

    def _sum(self, a):
        if self._weight is None:
            return a.sum(axis=-1)
        return a @ self._weight

    def _evaluate(self, C, D, beta):
        w = np.exp(beta)  # (P, K-1)
        den = C[0].copy()
        for g in range(w.shape[1]):
            den += C[g + 1] * w[:, g, None]
        ll = (D * beta).sum(axis=1) - self._sum(np.log(den))
        return ll, den, w

    def _start(self, cuts, D):
        # crude event-rate ratios against the reference group
        sizes = self.group_sizes(cuts)
        events = np.column_stack([self.group_events(cuts)[:, :1], D])
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = events / sizes
            beta = np.log(rate[:, 1:] / rate[:, :1])
        return np.where(np.isfinite(beta), np.clip(beta, -5, 5), 0.0)

    def fit(self, cuts, max_iterations=50, tol=1e-9, max_halvings=10, bound=50.0):
        cuts = np.atleast_2d(np.asarray(cuts, dtype=np.int64))
        P, m = cuts.shape
        C = self._slot_terms(cuts)
        D = self.group_events(cuts)[:, 1:]
        beta = self._start(cuts, D)
        ll, den, w = self._evaluate(C, D, beta)
        active = np.ones(P, dtype=bool)
        converged = np.zeros(P, dtype=bool)
        iterations = np.zeros(P, dtype=np.int64)
        info = np.zeros((P, m, m))
        diag = np.arange(m)
        for _ in range(max_iterations):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            Ca = C[:, idx] if idx.size < P else C
            inv = 1.0 / den[idx]
            q = Ca[1:] * inv * w[idx].T[:, :, None]  # (m, p, S)
            qt = q.transpose(1, 0, 2)  # (p, m, S)
            if self._weight is None:
                Ia = -np.matmul(qt, qt.transpose(0, 2, 1))
            else:
                Ia = -np.matmul(qt * self._weight, qt.transpose(0, 2, 1))
            first = self._sum(qt)
            score = D[idx] - first
            Ia[:, diag, diag] += first
            info[idx] = Ia
            ok = np.linalg.cond(Ia) < 1e12
            step = np.zeros_like(score)
            step[ok] = np.linalg.solve(Ia[ok], score[ok][..., None])[..., 0]
            iterations[idx] += 1
            new_beta = beta[idx] + step
            new_ll, new_den, new_w = self._evaluate(Ca, D[idx], new_beta)
            for _h in range(max_halvings):
                worse = ~(new_ll >= ll[idx] - 1e-12 * np.abs(ll[idx]))
                if not worse.any():
                    break
                step[worse] *= 0.5
                new_beta[worse] = beta[idx][worse] + step[worse]
                sub = np.flatnonzero(worse)
                l2, d2, w2 = self._evaluate(Ca[:, sub], D[idx][sub], new_beta[sub])
                new_ll[sub], new_den[sub], new_w[sub] = l2, d2, w2
            change = np.abs(new_ll - ll[idx])
            small_step = np.abs(step).max(axis=1) <= 1e-6 * (1.0 + np.abs(new_beta).max(axis=1))
            beta[idx], ll[idx], den[idx], w[idx] = new_beta, new_ll, new_den, new_w
            done = ok & (change <= tol * np.abs(new_ll)) & small_step
            diverged = (~ok) | (np.abs(new_beta).max(axis=1) > bound)
            converged[idx[done & ~diverged]] = True
            active[idx[done | diverged]] = False
        se = np.full((P, m), np.nan)
        good = converged & (np.linalg.cond(info) < 1e12)
        if good.any():
            cov = np.linalg.inv(info[good])
            se[good] = np.sqrt(np.clip(np.diagonal(cov, axis1=1, axis2=2), 0, None))
        converged &= good
        return GroupedFits(beta, se, ll, converged, iterations)

    def null_log_likelihood(self):
        C = self._slot_terms(np.zeros((1, 0), dtype=np.int64))
        return float(-self._sum(np.log(C[0, 0])))


def objective_values(strategy, hazard_ratios, lr_statistic):
    """Objective per candidate; ``hazard_ratios`` is ``(P, 3)`` for mild/moderate/severe."""
    hr = np.asarray(hazard_ratios)
    if strategy == "min_adjacent_diff":
        return np.minimum(hr[:, 1] - hr[:, 0], hr[:, 2] - hr[:, 1])
    if strategy == "sum_adjacent_diff":
        return (hr[:, 1] - hr[:, 0]) + (hr[:, 2] - hr[:, 1])
    if strategy == "likelihood_ratio":
        return np.asarray(lr_statistic, dtype=float)
    raise ValueError(f"unknown objective {strategy!r}")


@dataclass
class SweepResult:
    """All evaluated pairs plus the selection.

    ``trace`` rows: ``t1, t2, n_0..n_3, hr_mild, hr_moderate, hr_severe,
    lr_statistic, objective, feasible, converged``.
    """

    trace: list
    selected: tuple
    selected_objective: float
    selected_hazard_ratios: tuple
    lr_statistic: float
    lr_p_value: float
    non_separating: bool
    config: SweepConfig
    n_feasible: int
    stage1_trace: list = field(default_factory=list)

    @property
    def evaluated_pairs(self):
        return [r for r in self.trace if r["converged"]]

    def to_dict(self):
        return {
            "schema": "bacsurv.sweep/1",
            "selected": {"t1": self.selected[0], "t2": self.selected[1]},
            "objective": self.config.objective,
            "mode": self.config.mode,
            "selected_objective": _round(self.selected_objective),
            "selected_hazard_ratios": {
                k: _round(v) for k, v in zip(("mild", "moderate", "severe"), self.selected_hazard_ratios)
            },
            "lr_statistic": _round(self.lr_statistic),
            "lr_p_value": _round(self.lr_p_value),
            "non_separating": self.non_separating,
            "n_pairs_evaluated": len(self.trace),
            "n_pairs_feasible": self.n_feasible,
            "grid": {
                "start": self.config.grid_start,
                "end": self.config.grid_end,
                "step": self.config.grid_step,
                "noise_floor": self.config.noise_floor,
            },
            "min_group_size": self.config.min_group_size,
        }


def _round(x, digits=10):
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.{digits}g}")


TRACE_COLUMNS = (
    "t1", "t2", "n_no_bac", "n_mild", "n_moderate", "n_severe",
    "hr_mild", "hr_moderate", "hr_severe", "lr_statistic", "objective", "feasible", "converged",
)


def _run_batch(fitter, cuts, config, null_ll):
    sizes = fitter.group_sizes(cuts)
    feasible = (sizes >= config.min_group_size).all(axis=1)
    hr = np.full((len(cuts), cuts.shape[1]), np.nan)
    lr = np.full(len(cuts), np.nan)
    conv = np.zeros(len(cuts), dtype=bool)
    fidx = np.flatnonzero(feasible)
    for start in range(0, fidx.size, config.chunk_size):
        sub = fidx[start : start + config.chunk_size]
        fits = fitter.fit(cuts[sub], max_iterations=config.max_iterations)
        hr[sub] = np.exp(fits.coefficients)
        lr[sub] = 2.0 * (fits.log_likelihood - null_ll)
        conv[sub] = fits.converged
    return sizes, feasible, hr, lr, conv


def _bins(bac, edges):
    return np.searchsorted(edges, np.asarray(bac, dtype=float), side="right")


def sweep_thresholds(bac_area, durations, events, config=None):
    """Select ``(t1, t2)`` by exhaustive grid search.

    Returns
    -------
    SweepResult

    Raises
    ------
    InfeasibleSweepError
        If no pair gives four groups of at least ``min_group_size`` subjects
        with a converged fit.
    """
    config = config or SweepConfig()
    bac_area = np.asarray(bac_area, dtype=float)
    durations = np.asarray(durations, dtype=float)
    events = np.asarray(events).astype(bool)
    if bac_area.size == 0:
        raise ValueError("empty cohort")
    if np.any(np.isnan(bac_area)) or np.any(bac_area < 0):
        raise ValueError("bac_area must be non-negative")
    grid = config.grid()
    edges = np.concatenate([[config.noise_floor], grid])
    fitter = GroupedCoxFitter(durations, events, _bins(bac_area, edges), edges.size + 1, config.tie_method)
    null_ll = fitter.null_log_likelihood()
    cut_of = {float(t): i + 2 for i, t in enumerate(grid)}  # bins >= cut have bac >= t

    stage1 = []
    if config.mode == "sequential":
        c1 = np.array([[1, cut_of[float(t)]] for t in grid], dtype=np.int64)
        sizes, feasible, hr, lr, conv = _run_batch(fitter, c1, config, null_ll)
        ok = feasible & conv
        if not ok.any():
            raise InfeasibleSweepError("no feasible first cut-point")
        if config.objective == "likelihood_ratio":
            obj1 = lr
        else:
            obj1 = hr[:, 1] - hr[:, 0]
        for i, t in enumerate(grid):
            stage1.append({"t1": float(t), "hr_mild": hr[i, 0], "hr_upper": hr[i, 1], "lr_statistic": lr[i],
                           "objective": obj1[i], "feasible": bool(feasible[i]), "converged": bool(conv[i])})
        best_t1 = float(grid[np.flatnonzero(ok)[np.argmax(obj1[ok])]])
        pairs = [(best_t1, float(t2)) for t2 in grid if t2 > best_t1]
    else:
        pairs = [(float(a), float(b)) for i, a in enumerate(grid) for b in grid[i + 1 :]]
    if not pairs:
        raise InfeasibleSweepError("grid yields no ordered pair t1 < t2")
    cuts = np.array([[1, cut_of[a], cut_of[b]] for a, b in pairs], dtype=np.int64)
    sizes, feasible, hr, lr, conv = _run_batch(fitter, cuts, config, null_ll)
    obj = objective_values(config.objective, hr, lr)
    ok = feasible & conv & np.isfinite(obj)
    trace = []
    for i, (a, b) in enumerate(pairs):
        trace.append(
            {
                "t1": a, "t2": b,
                "n_no_bac": int(sizes[i, 0]), "n_mild": int(sizes[i, 1]),
                "n_moderate": int(sizes[i, 2]), "n_severe": int(sizes[i, 3]),
                "hr_mild": hr[i, 0], "hr_moderate": hr[i, 1], "hr_severe": hr[i, 2],
                "lr_statistic": lr[i], "objective": obj[i] if ok[i] else float("nan"),
                "feasible": bool(feasible[i]), "converged": bool(conv[i]),
            }
        )
    if not ok.any():
        raise InfeasibleSweepError(
            f"no threshold pair gives four groups of >= {config.min_group_size} subjects with a converged fit"
        )
    # pairs are in (t1, t2) order, so argmax's first-occurrence rule breaks ties
    best = np.flatnonzero(ok)[np.argmax(obj[ok])]
    n_feasible = int(ok.sum())
    stat = float(lr[best])
    p = chi2_sf(stat, 3)
    non_sep = bool(p * n_feasible >= config.alpha)
    return SweepResult(
        trace=trace,
        selected=pairs[best],
        selected_objective=float(obj[best]),
        selected_hazard_ratios=tuple(float(h) for h in hr[best]),
        lr_statistic=stat,
        lr_p_value=p,
        non_separating=non_sep,
        config=config,
        n_feasible=n_feasible,
        stage1_trace=stage1,
    )


def write_trace(result, stream):
    """Write the objective trace as CSV for heat-map plotting."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in result.trace:
        w.writerow([_cell(r[c]) for c in TRACE_COLUMNS])


def _cell(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else f"{float(v):.10g}"
    return str(v)


def write_selection(result, stream):
    json.dump(result.to_dict(), stream, indent=2, sort_keys=True)
    stream.write("\n")


@dataclass(frozen=True)
class GroupComparison:
    groups: tuple
    outcome: str
    statistic: float = float("nan")
    degrees_of_freedom: float = float("nan")
    p_value: float = float("nan")
    note: str = ""

    def to_dict(self):
        return {
            "groups": list(self.groups),
            "outcome": self.outcome,
            "statistic": _round(self.statistic),
            "degrees_of_freedom": _round(self.degrees_of_freedom),
            "p_value": _round(self.p_value),
            "note": self.note,
        }


def validate_groupings(bac_area, durations, events, thresholds):
    """Welch t-tests between adjacent severity groups.

    Compares the event indicator and the follow-up duration of each adjacent
    pair (No BAC/Mild, Mild/Moderate, Moderate/Severe). Pairs where a group
    has fewer than two members, or where both groups are constant, are
    skipped with a note.
    """
    sev = classify_severity_array(bac_area, thresholds)
    durations = np.asarray(durations, dtype=float)
    events = np.asarray(events, dtype=float)
    out = []
    for g in range(3):
        a, b = sev == g, sev == g + 1
        pair = (GROUP_LABELS[g], GROUP_LABELS[g + 1])
        for name, values in (("event", events), ("duration_days", durations)):
            if a.sum() < 2 or b.sum() < 2:
                out.append(GroupComparison(pair, name, note="skipped: group has fewer than 2 members"))
                continue
            try:
                r = welch_t(values[a], values[b])
            except ValueError as exc:
                out.append(GroupComparison(pair, name, note=f"skipped: {exc}"))
                continue
            out.append(GroupComparison(pair, name, r.statistic, r.degrees_of_freedom, r.p_value))
    return out
