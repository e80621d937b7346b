"""Product-limit survival curves with Greenwood variance."""

from dataclasses import dataclass
from statistics import NormalDist
import warnings

import numpy as np

Z_95 = NormalDist().inv_cdf(0.975)


@dataclass
class SurvivalCurve:
    """Step-function survival estimate for one stratum.

    One row per distinct observed time (event or censoring); survival only
    drops at rows with ``n_events > 0``. Before the first time point the
    survival is 1.
    """

    stratum_label: str
    time_points: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray
    n_censored: np.ndarray
    survival: np.ndarray
    variance: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray

    @property
    def n_subjects(self):
        return int(self.n_at_risk[0]) if self.n_at_risk.size else 0

    def survival_at(self, t):
        """Evaluate the right-continuous step function at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        padded = np.concatenate([[1.0], self.survival])
        out = padded[np.searchsorted(self.time_points, t, side="right")]
        return float(out) if out.ndim == 0 else out

    def at_risk_at(self, t):
        """Number of subjects still under observation at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        # subjects with duration >= t: cumulative removals before t
        removed = np.concatenate([[0], np.cumsum(self.n_events + self.n_censored)])
        idx = np.searchsorted(self.time_points, t, side="left")
        out = self.n_subjects - removed[idx]
        return int(out) if out.ndim == 0 else out

    def rows(self):
        for j in range(self.time_points.size):
            yield {
                "stratum": self.stratum_label,
                "time": float(self.time_points[j]),
                "n_at_risk": int(self.n_at_risk[j]),
                "n_events": int(self.n_events[j]),
                "n_censored": int(self.n_censored[j]),
                "survival": float(self.survival[j]),
                "variance": float(self.variance[j]),
                "ci_lower": float(self.ci_lower[j]),
                "ci_upper": float(self.ci_upper[j]),
            }


def _cloglog_band(surv, greenwood_sum, z):
    lower = surv.copy()
    upper = surv.copy()
    inner = (surv > 0) & (surv < 1)
    log_s = np.log(surv[inner])
    sigma = np.sqrt(greenwood_sum[inner]) / np.abs(log_s)
    # log(-log S) +/- z*sigma mapped back through S**exp(.)
    lower[inner] = surv[inner] ** np.exp(z * sigma)
    upper[inner] = surv[inner] ** np.exp(-z * sigma)
    return np.clip(lower, 0.0, 1.0), np.clip(upper, 0.0, 1.0)


def product_limit(durations, events, label="all", z=Z_95):
    """Kaplan-Meier estimate for a single group.

    The confidence band is the complementary log-log transform of the
    Greenwood variance, which keeps it inside ``[0, 1]``.
    """
    durations = np.asarray(durations, dtype=float)
    events = np.asarray(events).astype(bool)
    if durations.size == 0:
        raise ValueError("cannot estimate a survival curve from an empty group")
    if np.any(~(durations > 0)):
        raise ValueError("durations must be positive")
    times, inverse = np.unique(durations, return_inverse=True)
    d = np.bincount(inverse, weights=events, minlength=times.size).astype(np.int64)
    total = np.bincount(inverse, minlength=times.size)
    c = total - d
    at_risk = durations.size - np.concatenate([[0], np.cumsum(total)[:-1]])

    # Between censorings the factors telescope: S = S_anchor * (n_j - d_j) / n_anchor.
    # One division per time keeps uncensored stretches exact (e.g. 2/3, or k/n).
    segment = np.concatenate([[0], np.cumsum(c > 0)[:-1]])
    first = np.searchsorted(segment, segment, side="left")
    ratio = (at_risk - d) / at_risk[first]
    last = np.flatnonzero(np.diff(np.append(segment, -1)))
    anchor = np.concatenate([[1.0], np.cumprod(ratio[last])[:-1]])
    surv = anchor[segment] * ratio
    with np.errstate(divide="ignore", invalid="ignore"):
        increments = np.where(d > 0, d / (at_risk * (at_risk - d)), 0.0)
    greenwood_sum = np.cumsum(increments)
    # once S hits 0 the Greenwood sum is infinite; report zero variance there
    greenwood_sum = np.where(surv > 0, greenwood_sum, 0.0)
    variance = surv**2 * greenwood_sum
    lower, upper = _cloglog_band(surv, greenwood_sum, z)
    return SurvivalCurve(
        stratum_label=str(label),
        time_points=times,
        n_at_risk=at_risk.astype(np.int64),
        n_events=d,
        n_censored=c.astype(np.int64),
        survival=surv,
        variance=variance,
        ci_lower=lower,
        ci_upper=upper,
    )


def kaplan_meier(durations, events, strata=None, labels=None):
    """Kaplan-Meier curves, one per stratum.

    Parameters
    ----------
    durations, events : array_like
        Follow-up time (> 0) and event indicator per subject.
    strata : array_like, optional
        Stratum value per subject; all subjects form one stratum if omitted.
    labels : sequence, optional
        Stratum values to report, in order. Requested strata with no subjects
        are omitted with a warning.

    Returns
    -------
    dict
        Maps stratum value to :class:`SurvivalCurve`, in ``labels`` order (or
        sorted order of the observed strata).
    """
    durations = np.asarray(durations, dtype=float)
    events = np.asarray(events).astype(bool)
    if strata is None:
        strata = np.zeros(durations.size, dtype=np.int64)
        labels = [0] if labels is None else labels
    strata = np.asarray(strata)
    if labels is None:
        labels = sorted(np.unique(strata).tolist())
    curves = {}
    for value in labels:
        mask = strata == value
        if not mask.any():
            warnings.warn(f"stratum {value!r} has no subjects; omitted", stacklevel=2)
            continue
        curves[value] = product_limit(durations[mask], events[mask], label=value)
    return curves
