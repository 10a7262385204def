"""Survival metrics: Kaplan-Meier, concordance, IPCW C^td and IPCW Brier score.

Predictions enter as survival probabilities ``S(t | x_i)``; a row with lower
predicted survival is treated as higher risk.  All functions are pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METRIC_NAMES = ("c", "ctd", "brier")


@dataclass(frozen=True)
class StepSurvival:
    """Right-continuous step function equal to 1 before the first jump."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-D of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if np.any(np.diff(v) > 0) or np.any(v < 0) or np.any(v > 1):
            raise ValueError("values must be nonincreasing in [0, 1]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right")
        return np.concatenate([[1.0], self.values])[idx]

    def left_limit(self, t):
        """S(t-): the value just before ``t``."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="left")
        return np.concatenate([[1.0], self.values])[idx]


def kaplan_meier(times, events, target: str = "event") -> StepSurvival:
    """Product-limit estimate for the event time, or for censoring with ``target='censor'``."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    events = np.asarray(events).reshape(-1).astype(bool)
    if times.size == 0:
        raise ValueError("need at least one observation")
    if target == "censor":
        events = ~events
    elif target != "event":
        raise ValueError("target must be 'event' or 'censor'")
    uniq, inverse = np.unique(times, return_inverse=True)
    d = np.bincount(inverse, weights=events.astype(float), minlength=len(uniq))
    leaving = np.bincount(inverse, minlength=len(uniq))
    at_risk = len(times) - np.concatenate([[0], np.cumsum(leaving)[:-1]])
    jump = d > 0
    if not np.any(jump):
        return StepSurvival(np.empty(0), np.empty(0))
    factors = 1.0 - d[jump] / at_risk[jump]
    return StepSurvival(uniq[jump], np.cumprod(factors))


def _pair_counts(surv, y, delta, weights=None, restrict=None, chunk=512):
    """Weighted concordant and comparable totals over pairs y_i <= y_j, delta_i = 1."""
    surv = np.asarray(surv, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    anchor = np.asarray(delta) == 1
    if restrict is not None:
        anchor &= restrict
    idx = np.flatnonzero(anchor)
    w_all = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    conc = comp = 0.0
    n_pairs = 0
    for start in range(0, len(idx), chunk):
        i = idx[start:start + chunk]
        mask = y[i, None] <= y[None, :]
        mask[np.arange(len(i)), i] = False
        score = np.where(surv[i, None] < surv[None, :], 1.0,
                         np.where(surv[i, None] == surv[None, :], 0.5, 0.0))
        w = w_all[i, None]
        comp += float(np.sum(mask * w))
        conc += float(np.sum(mask * w * score))
        n_pairs += int(mask.sum())
    return conc, comp, n_pairs


def c_index(surv, y, delta) -> float:
    """Share of comparable pairs (y_i <= y_j, delta_i = 1) with S_i < S_j; ties count 1/2."""
    conc, comp, n_pairs = _pair_counts(surv, y, delta)
    if n_pairs == 0:
        raise ValueError("no comparable pairs")
    return conc / comp


def quantile_times(y, delta) -> np.ndarray:
    """10%, 20%, ..., 100% quantiles of the event times."""
    events = np.asarray(y, dtype=np.float64)[np.asarray(delta) == 1]
    if events.size < 10:
        raise ValueError(f"need at least 10 events for the quantile average, got {events.size}")
    return np.quantile(events, np.arange(1, 11) / 10.0)


def c_index_quantile_avg(surv_matrix, y, delta, times=None) -> float:
    """Mean C-index over the ten event-time quantiles; ``surv_matrix`` is (n, 10)."""
    if times is None:
        times = quantile_times(y, delta)
    elif np.sum(np.asarray(delta) == 1) < 10:
        raise ValueError("need at least 10 events for the quantile average")
    surv_matrix = np.asarray(surv_matrix, dtype=np.float64)
    if surv_matrix.shape[1] != len(times):
        raise ValueError("one survival column per quantile time is required")
    return float(np.mean([c_index(surv_matrix[:, j], y, delta) for j in range(len(times))]))


@dataclass
class MetricResult:
    metric: str
    value: float
    time: float | list | None = None
    n_pairs: int | None = None
    n: int | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"metric": self.metric, "time": self.time, "value": self.value,
                "n_pairs": self.n_pairs, "n": self.n, "warnings": self.warnings}


def c_td_ipcw(surv, y, delta, tau: float, censor_km: StepSurvival | None = None) -> MetricResult:
    """Truncated concordance with weights 1 / S_C(y_i-)^2 over anchors y_i <= tau.

    ``surv`` holds each row's predicted survival at ``tau``.  Anchors whose
    censoring weight is undefined (S_C(y_i-) = 0) are dropped and counted in
    the warnings.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    y = np.asarray(y, dtype=np.float64)
    if censor_km is None:
        censor_km = kaplan_meier(y, delta, target="censor")
    g = censor_km.left_limit(y)
    usable = g > 0
    warnings = []
    dropped = int(np.sum(~usable & (np.asarray(delta) == 1) & (y <= tau)))
    if dropped:
        warnings.append(f"{dropped} anchor rows dropped: censoring survival is zero")
    with np.errstate(divide="ignore"):
        weights = np.where(usable, 1.0 / np.where(usable, g, 1.0) ** 2, 0.0)
    conc, comp, n_pairs = _pair_counts(surv, y, delta, weights, restrict=(y <= tau) & usable)
    if n_pairs == 0:
        raise ValueError("no comparable pairs")
    return MetricResult("ctd", conc / comp, float(tau), n_pairs, len(y), warnings)


def brier_ipcw(surv, y, delta, t: float | None = None,
               censor_km: StepSurvival | None = None) -> MetricResult:
    """IPCW Brier score at ``t`` (default: 75th percentile of event times).

    Events before ``t`` contribute S^2 / S_C(y_i-), survivors past ``t``
    contribute (1 - S)^2 / S_C(t), rows censored before ``t`` contribute 0.
    """
    y = np.asarray(y, dtype=np.float64)
    delta = np.asarray(delta)
    surv = np.asarray(surv, dtype=np.float64)
    if t is None:
        t = float(np.quantile(y[delta == 1], 0.75))
    if censor_km is None:
        censor_km = kaplan_meier(y, delta, target="censor")
    g_t = float(censor_km(t))
    if g_t <= 0:
        raise ValueError("censoring support exhausted")
    died = (y <= t) & (delta == 1)
    alive = y > t
    g_i = censor_km.left_limit(y)
    total = np.sum(surv[died] ** 2 / g_i[died]) + np.sum((1.0 - surv[alive]) ** 2) / g_t
    return MetricResult("brier", float(total / len(y)), float(t), None, len(y), [])


def write_report(path, results) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in results], indent=2))
