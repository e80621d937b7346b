"""k-sample log-rank test."""

from dataclasses import dataclass

import numpy as np

from .._special import chi2_sf


class UndefinedStatisticError(ValueError):
    """The test statistic cannot be formed (e.g. no events)."""


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    degrees_of_freedom: int
    p_value: float
    groups: tuple = ()
    observed: tuple = ()
    expected: tuple = ()

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "degrees_of_freedom": self.degrees_of_freedom,
            "p_value": self.p_value,
            "groups": [str(g) for g in self.groups],
            "observed": list(self.observed),
            "expected": list(self.expected),
        }


def logrank_test(durations, events, groups):
    """Log-rank test of equal survival across the groups present in ``groups``.

    The statistic is ``(O - E)' V^- (O - E)`` on the first ``k - 1`` groups,
    with the hypergeometric covariance ``V`` accumulated over distinct event
    times; it is referred to a chi-square with ``k - 1`` degrees of freedom.
    """
    durations = np.asarray(durations, dtype=float)
    events = np.asarray(events).astype(bool)
    groups = np.asarray(groups)
    labels, g = np.unique(groups, return_inverse=True)
    k = labels.size
    if k < 2:
        raise ValueError(f"log-rank test needs at least 2 groups, got {k}")
    if not events.any():
        raise UndefinedStatisticError("no events observed; log-rank statistic undefined")

    times, t_idx = np.unique(durations, return_inverse=True)
    m = times.size
    # per-time, per-group removals and events
    removed = np.zeros((m, k))
    np.add.at(removed, (t_idx, g), 1.0)
    dead = np.zeros((m, k))
    np.add.at(dead, (t_idx[events], g[events]), 1.0)
    n_g = np.bincount(g, minlength=k) - np.vstack([np.zeros(k), np.cumsum(removed, axis=0)[:-1]])

    has_event = dead.sum(axis=1) > 0
    n_g = n_g[has_event]
    dead = dead[has_event]
    n = n_g.sum(axis=1)
    d = dead.sum(axis=1)
    frac = n_g / n[:, None]
    expected = (d[:, None] * frac).sum(axis=0)
    observed = dead.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(n > 1, d * (n - d) / (n - 1), 0.0)
    V = np.einsum("t,ti,tj->ij", scale, frac, frac)
    V = np.diag((scale[:, None] * frac).sum(axis=0)) - V

    diff = (observed - expected)[: k - 1]
    V_sub = V[: k - 1, : k - 1]
    stat = float(diff @ np.linalg.pinv(V_sub) @ diff)
    stat = max(stat, 0.0)
    return LogRankResult(
        statistic=stat,
        degrees_of_freedom=k - 1,
        p_value=chi2_sf(stat, k - 1),
        groups=tuple(labels.tolist()),
        observed=tuple(float(x) for x in observed),
        expected=tuple(float(x) for x in expected),
    )
