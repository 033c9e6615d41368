"""Product-limit estimation on residuals and the Buckley-James tail mean."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateTailError(ValueError):
    """Raised when no KM mass lies strictly above a threshold."""


@dataclass(frozen=True)
class KMCurve:
    jump_times: np.ndarray
    survival_after: np.ndarray
    point_mass: np.ndarray

    def __post_init__(self):
        for name in ("jump_times", "survival_after", "point_mass"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def total_mass(self) -> float:
        return float(self.point_mass.sum())


def km_fit(values, events) -> KMCurve:
    """Kaplan-Meier estimate of the distribution of ``values``.

    Censored observations contribute to risk sets only. At a tied value,
    events are counted before censorings. If the largest value is censored
    it is reclassified as an event (Efron's tail correction) so the curve
    always carries total mass 1.
    """
    values = np.asarray(values, dtype=float).ravel()
    events = np.asarray(events, dtype=bool).ravel()
    if values.size == 0:
        raise ValueError("no residuals")
    if values.shape != events.shape:
        raise ValueError("values and events differ in length")
    if not np.all(np.isfinite(values)):
        raise ValueError("residuals must be finite")

    events = events.copy()
    vmax = values.max()
    events[values == vmax] = True

    uniq, inverse = np.unique(values, return_inverse=True)
    n_total = np.bincount(inverse, minlength=uniq.size)
    n_event = np.bincount(inverse, weights=events, minlength=uniq.size)
    # risk set at u_j: everyone with value >= u_j
    at_risk = values.size - np.concatenate(([0], np.cumsum(n_total)[:-1]))

    keep = n_event > 0
    times = uniq[keep]
    factors = 1.0 - n_event[keep] / at_risk[keep]
    surv = np.cumprod(factors)
    # the last factor is exactly 0 because every tied maximum is an event
    surv[-1] = 0.0
    before = np.concatenate(([1.0], surv[:-1]))
    mass = before - surv
    return KMCurve(times, surv, mass)


def km_survival_at(curve: KMCurve, t: float) -> float:
    idx = np.searchsorted(curve.jump_times, t, side="right")
    if idx == 0:
        return 1.0
    return float(curve.survival_after[idx - 1])


def km_tail_expectation(curve: KMCurve, threshold: float) -> float:
    """E[T | T > threshold] under the KM distribution."""
    value = km_tail_expectations(curve, [threshold])[0]
    if np.isnan(value):
        raise DegenerateTailError("degenerate tail")
    return float(value)


def km_tail_expectations(curve: KMCurve, thresholds) -> np.ndarray:
    """Vectorised :func:`km_tail_expectation`; NaN where the tail is empty."""
    thresholds = np.asarray(thresholds, dtype=float)
    t = curve.jump_times
    m = curve.point_mass
    # suffix sums of mass and first moment
    tail_mass = np.concatenate((np.cumsum(m[::-1])[::-1], [0.0]))
    tail_moment = np.concatenate((np.cumsum((t * m)[::-1])[::-1], [0.0]))
    start = np.searchsorted(t, thresholds, side="right")
    denom = tail_mass[start]
    out = np.full(thresholds.shape, np.nan)
    ok = denom > 0.0
    out[ok] = tail_moment[start[ok]] / denom[ok]
    # a conditional mean lies within its support; clipping removes rounding
    # drift (a single-jump tail returns that jump exactly)
    out[ok] = np.clip(out[ok], t[start[ok]], t[-1])
    return out
