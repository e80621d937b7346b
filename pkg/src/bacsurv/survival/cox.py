"""Cox proportional-hazards regression by Newton-Raphson on the partial likelihood."""

from dataclasses import dataclass, field
import math
from statistics import NormalDist

import numpy as np

from .._special import normal_two_sided_p

Z_95 = NormalDist().inv_cdf(0.975)

TIE_METHODS = ("efron", "breslow")
_DIVERGING = 10.0


class CoxFitError(ValueError):
    """Base class for errors raised while fitting a Cox model."""


class MonotoneLikelihoodError(CoxFitError):
    """The partial likelihood has no finite maximizer (separation)."""

    def __init__(self, term, beta):
        self.term = term
        self.beta = beta
        super().__init__(
            f"monotone likelihood: coefficient for {term!r} diverged (|beta| = {abs(beta):.1f}); "
            "the covariate separates event times"
        )


class CoxRankError(CoxFitError):
    """The covariate matrix or the observed information is singular."""


class NotConvergedError(CoxFitError):
    """Raised when a converged fit is required but the fit did not converge."""


@dataclass(frozen=True)
class CoxSpec:
    """Model and optimizer settings for :func:`cox_fit`.

    ``exposure`` is either ``"categorical"`` (severity indicators with No BAC as
    the reference) or ``"continuous"`` (``log2(bac + 1)``); it is used when the
    design matrix is assembled from a cohort frame and is ignored by
    :func:`cox_fit` itself.
    """

    exposure: str = "categorical"
    adjustment_covariates: tuple = ()
    tie_method: str = "efron"
    max_iterations: int = 100
    convergence_tolerance: float = 1e-9
    max_step_halvings: int = 10
    separation_bound: float = 50.0

    def __post_init__(self):
        if self.tie_method not in TIE_METHODS:
            raise ValueError(f"tie_method must be one of {TIE_METHODS}, got {self.tie_method!r}")
        if self.exposure not in ("categorical", "continuous", "none"):
            raise ValueError(f"unknown exposure {self.exposure!r}")


@dataclass
class CoxFit:
    terms: list
    coefficients: np.ndarray
    covariance: np.ndarray
    log_partial_likelihood: float
    iterations_used: int
    converged: bool
    n_subjects: int = 0
    n_events: int = 0
    tie_method: str = "efron"
    dropped_terms: list = field(default_factory=list)
    null_log_partial_likelihood: float = float("nan")

    @property
    def standard_errors(self):
        return np.sqrt(np.diag(self.covariance))

    @property
    def hazard_ratios(self):
        return np.exp(self.coefficients)

    @property
    def ci_95(self):
        se = self.standard_errors
        with np.errstate(over="ignore"):  # a huge SE gives an infinite upper bound
            lower = np.exp(self.coefficients - Z_95 * se)
            upper = np.exp(self.coefficients + Z_95 * se)
        return np.column_stack([lower, upper])

    @property
    def wald_z(self):
        return self.coefficients / self.standard_errors

    @property
    def wald_p(self):
        return np.array([normal_two_sided_p(z) for z in self.wald_z])

    @property
    def likelihood_ratio_statistic(self):
        return 2.0 * (self.log_partial_likelihood - self.null_log_partial_likelihood)

    def to_dict(self):
        ci = self.ci_95
        terms = []
        for j, name in enumerate(self.terms):
            terms.append(
                {
                    "term": name,
                    "coef": float(self.coefficients[j]),
                    "se": float(self.standard_errors[j]),
                    "hazard_ratio": float(self.hazard_ratios[j]),
                    "ci_lower": float(ci[j, 0]),
                    "ci_upper": float(ci[j, 1]),
                    "p_value": float(self.wald_p[j]),
                }
            )
        return {
            "terms": terms,
            "covariance": self.covariance.tolist(),
            "log_partial_likelihood": float(self.log_partial_likelihood),
            "null_log_partial_likelihood": float(self.null_log_partial_likelihood),
            "iterations_used": int(self.iterations_used),
            "converged": bool(self.converged),
            "n_subjects": int(self.n_subjects),
            "n_events": int(self.n_events),
            "tie_method": self.tie_method,
            "dropped_terms": list(self.dropped_terms),
        }


class PartialLikelihood:
    """Cox log partial likelihood with analytic score and observed information.

    Sorting, risk-set boundaries and the tie structure are computed once; each
    call to :meth:`evaluate` is then ``O(n p^2)``.

    Parameters
    ----------
    durations, events : array_like
        Follow-up times and event indicators (1 = event, 0 = censored).
    X : array_like, shape (n, p)
        Covariates. Columns are centered internally, which leaves the
        likelihood unchanged.
    tie_method : {'efron', 'breslow'}
    order_key : array_like, optional
        Secondary sort key (e.g. subject ids) making the canonical input order
        ``(duration, status, key)`` independent of how rows arrived.
    """

    def __init__(self, durations, events, X, tie_method="efron", order_key=None):
        durations = np.asarray(durations, dtype=float)
        events = np.asarray(events).astype(bool)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = durations.shape[0]
        if events.shape[0] != n or X.shape[0] != n:
            raise ValueError("durations, events and X must have the same number of rows")
        if tie_method not in TIE_METHODS:
            raise ValueError(f"tie_method must be one of {TIE_METHODS}")
        if order_key is None:
            order = np.lexsort((events, durations))
        else:
            order = np.lexsort((np.asarray(order_key), events, durations))
        self.order = order
        self.time = durations[order]
        self.event = events[order]
        X = X[order]
        self.means = X.mean(axis=0) if n else np.zeros(X.shape[1])
        self.X = X - self.means
        self.tie_method = tie_method
        self.n, self.p = self.X.shape

        ev_idx = np.flatnonzero(self.event)
        self.event_index = ev_idx
        self.n_events = ev_idx.size
        ev_times = self.time[ev_idx]
        block_times, block_of_event, d = np.unique(ev_times, return_inverse=True, return_counts=True)
        self.block_times = block_times
        self.block_of_event = block_of_event
        self.block_size = d
        self.block_start = np.searchsorted(self.time, block_times, side="left")
        # Position of each event inside its tied block gives the Efron fraction l/d.
        rank_in_block = np.arange(ev_idx.size) - np.searchsorted(block_of_event, block_of_event, side="left")
        if tie_method == "efron":
            self.slot_frac = rank_in_block / d[block_of_event]
        else:
            self.slot_frac = np.zeros(ev_idx.size)
        self.slot_block = block_of_event
        self.sum_event_x = self.X[ev_idx].sum(axis=0)

    def evaluate(self, beta, derivatives=2):
        """Return ``(loglik, score, information)`` at ``beta``.

        ``derivatives`` = 0 skips the score and information, 1 skips the
        information.
        """
        beta = np.asarray(beta, dtype=float)
        X = self.X
        eta = X @ beta
        shift = eta.max() if self.n else 0.0
        w = np.exp(eta - shift)
        nb = self.block_times.size

        s0_rows = np.cumsum(w[::-1])[::-1]
        s0 = s0_rows[self.block_start]
        ev = self.event_index
        w_ev = w[ev]
        d0 = np.bincount(self.block_of_event, weights=w_ev, minlength=nb)
        frac = self.slot_frac
        blk = self.slot_block
        den = s0[blk] - frac * d0[blk]
        loglik = float(eta[ev].sum() - np.log(den).sum() - shift * ev.size)
        if derivatives == 0:
            return loglik, None, None

        wx = w[:, None] * X
        s1_rows = np.cumsum(wx[::-1], axis=0)[::-1]
        s1 = s1_rows[self.block_start]
        d1 = np.zeros((nb, self.p))
        np.add.at(d1, self.block_of_event, wx[ev])
        num = s1[blk] - frac[:, None] * d1[blk]
        ratio = num / den[:, None]
        score = self.sum_event_x - ratio.sum(axis=0)
        if derivatives == 1:
            return loglik, score, None

        inv_den = 1.0 / den
        a_block = np.bincount(blk, weights=inv_den, minlength=nb)
        c_block = np.bincount(blk, weights=frac * inv_den, minlength=nb)
        row_weight = np.zeros(self.n)
        np.add.at(row_weight, self.block_start, a_block)
        row_weight = np.cumsum(row_weight) * w
        info = (X * row_weight[:, None]).T @ X
        ev_weight = c_block[self.block_of_event] * w_ev
        info -= (X[ev] * ev_weight[:, None]).T @ X[ev]
        info -= ratio.T @ ratio
        return loglik, score, info


def _drop_degenerate(X, names):
    keep = []
    dropped = []
    for j, name in enumerate(names):
        col = X[:, j]
        if X.shape[0] == 0 or np.ptp(col) == 0:
            dropped.append(name)
        else:
            keep.append(j)
    return keep, dropped


def cox_fit(durations, events, X, spec=None, names=None, order_key=None):
    """Fit a Cox proportional-hazards model.

    Newton-Raphson from ``beta = 0`` with step-halving whenever the partial
    likelihood decreases. The fit is declared converged once the relative
    change in the log partial likelihood drops below
    ``spec.convergence_tolerance`` and the Newton step has become negligible.

    Parameters
    ----------
    durations, events : array_like
        Follow-up time and event indicator per subject.
    X : array_like, shape (n, p)
        Covariate matrix. Constant columns are removed and reported in
        ``CoxFit.dropped_terms``.
    spec : CoxSpec, optional
    names : sequence of str, optional
        Column names; defaults to ``x0, x1, ...``.
    order_key : array_like, optional
        Tie-breaking key for the canonical sort, typically subject ids.

    Returns
    -------
    CoxFit
        ``converged`` is False when ``max_iterations`` was exhausted.

    Raises
    ------
    MonotoneLikelihoodError
        A coefficient exceeded ``spec.separation_bound`` in absolute value.
    CoxRankError
        The covariates are collinear or the information matrix is singular.
    CoxFitError
        No events were observed.
    """
    spec = spec or CoxSpec()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("names must match the number of covariate columns")
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates must be finite; drop incomplete cases first")
    events_arr = np.asarray(events).astype(bool)
    if not events_arr.any():
        raise CoxFitError("no events observed; the partial likelihood is undefined")

    keep, dropped = _drop_degenerate(X, names)
    X = X[:, keep]
    names = [names[j] for j in keep]
    if not names:
        raise CoxRankError(f"no informative covariates left (dropped {dropped})")
    pl = PartialLikelihood(durations, events_arr, X, spec.tie_method, order_key=order_key)
    if np.linalg.matrix_rank(pl.X) < pl.p:
        raise CoxRankError(f"covariate matrix is rank deficient: {names}")

    beta = np.zeros(pl.p)
    loglik, score, info = pl.evaluate(beta)
    null_loglik = loglik
    converged = False
    iterations = 0
    tol = spec.convergence_tolerance
    for iterations in range(1, spec.max_iterations + 1):
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            worst = int(np.argmax(np.abs(beta)))
            if iterations > 1 and abs(beta[worst]) > _DIVERGING:
                # Information vanished while a coefficient ran away.
                raise MonotoneLikelihoodError(names[worst], float(beta[worst])) from exc
            raise CoxRankError(f"observed information is singular at iteration {iterations}") from exc
        new_beta = beta + step
        new_loglik = pl.evaluate(new_beta, derivatives=0)[0]
        # a decrease within rounding noise still counts as ascent near the optimum
        floor = loglik - 1e-13 * max(abs(loglik), 1.0)
        halvings = 0
        while not (new_loglik >= floor) and halvings < spec.max_step_halvings:
            step = step / 2.0
            new_beta = beta + step
            new_loglik = pl.evaluate(new_beta, derivatives=0)[0]
            halvings += 1
        worst = int(np.argmax(np.abs(new_beta)))
        if abs(new_beta[worst]) > spec.separation_bound:
            raise MonotoneLikelihoodError(names[worst], float(new_beta[worst]))
        if not (new_loglik >= floor):
            # No ascent direction left at working precision.
            converged = abs(new_loglik - loglik) <= tol * max(abs(loglik), 1.0)
            break
        rel_change = abs(new_loglik - loglik) / max(abs(new_loglik), 1e-300)
        beta = new_beta
        loglik, score, info = pl.evaluate(beta)
        small_step = np.max(np.abs(step)) <= 1e-6 * (1.0 + np.max(np.abs(beta)))
        if rel_change < tol and small_step:
            converged = True
            break

    try:
        covariance = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise CoxRankError("observed information is singular at the optimum") from exc
    return CoxFit(
        terms=names,
        coefficients=beta,
        covariance=covariance,
        log_partial_likelihood=loglik,
        iterations_used=iterations,
        converged=converged,
        n_subjects=pl.n,
        n_events=pl.n_events,
        tie_method=spec.tie_method,
        dropped_terms=dropped,
        null_log_partial_likelihood=null_loglik,
    )


def format_p_value(p):
    if p < 0.001:
        return "<0.001"
    if p < 0.01:
        return f"{p:.3f}"
    return f"{p:.2f}"


def hazard_ratio_table(fit):
    """Per-term hazard ratio rows ``(HR, 95% CI, p)`` formatted to two decimals.

    Raises
    ------
    NotConvergedError
        If ``fit.converged`` is False.
    """
    if not fit.converged:
        raise NotConvergedError(
            f"refusing to tabulate an unconverged fit ({fit.iterations_used} iterations)"
        )
    ci = fit.ci_95
    rows = []
    for j, term in enumerate(fit.terms):
        hr = float(fit.hazard_ratios[j])
        lo, hi = float(ci[j, 0]), float(ci[j, 1])
        p = float(fit.wald_p[j])
        rows.append(
            {
                "term": term,
                "hazard_ratio": hr,
                "ci_lower": lo,
                "ci_upper": hi,
                "p_value": p,
                "hr_ci": f"{hr:.2f} ({lo:.2f}-{hi:.2f})",
                "p_formatted": format_p_value(p) if not math.isnan(p) else "NA",
            }
        )
    return rows
