"""Cox proportional-hazards comparator with restricted-mean Q-values."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .bj_boost import Standardizer

log = logging.getLogger(__name__)

MAX_ITER = 100
GRAD_TOL = 1e-8
MAX_HALVINGS = 20
SEPARATION_BOUND = 50.0
SEPARATION_CURVATURE = 1e-4


class SeparationError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, grad_norm: float):
        super().__init__(f"Newton-Raphson did not converge (gradient max-norm {grad_norm:.3g})")
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class CoxModel:
    coefficients: np.ndarray  # in standardised covariate space
    standardizer: Standardizer
    baseline_times: np.ndarray
    baseline_cumhaz: np.ndarray
    train_horizon: float
    loglik_history: tuple = ()

    def risk(self, X) -> np.ndarray:
        return np.exp(self.standardizer.transform(X) @ self.coefficients)

    def rmst(self, X, horizon: float | None = None) -> np.ndarray:
        h = self.train_horizon if horizon is None else float(horizon)
        return _step_rmst(self.baseline_times, self.baseline_cumhaz, self.risk(X), h)

    def predict(self, X) -> np.ndarray:
        """Q-values: restricted mean survival up to the training horizon."""
        return self.rmst(X)

    def to_dict(self) -> dict:
        return {
            "kind": "cox",
            "coefficients": self.coefficients.tolist(),
            "standardization": {
                "mean": self.standardizer.mean.tolist(),
                "scale": self.standardizer.scale.tolist(),
            },
            "baseline": [[float(t), float(c)] for t, c in zip(self.baseline_times, self.baseline_cumhaz)],
            "train_horizon": self.train_horizon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxModel":
        base = np.asarray(d["baseline"], dtype=float).reshape(-1, 2)
        std = d["standardization"]
        return cls(
            np.asarray(d["coefficients"], dtype=float),
            Standardizer(np.asarray(std["mean"], float), np.asarray(std["scale"], float)),
            base[:, 0].copy(),
            base[:, 1].copy(),
            float(d["train_horizon"]),
        )


def _step_rmst(times, cumhaz, risk, horizon) -> np.ndarray:
    # S(t | x) = exp(-cumhaz(t) * risk) is constant between baseline jumps;
    # jumps at or before 0 are already in effect at the origin.
    times = np.asarray(times, dtype=float)
    cumhaz = np.asarray(cumhaz, dtype=float)
    risk = np.atleast_1d(np.asarray(risk, dtype=float))
    if horizon <= 0.0:
        return np.zeros_like(risk)
    inside = times < horizon
    start_level = cumhaz[times <= 0.0][-1] if np.any(times <= 0.0) else 0.0
    t_in = times[inside & (times > 0.0)]
    c_in = cumhaz[inside & (times > 0.0)]
    edges = np.concatenate(([0.0], t_in, [horizon]))
    levels = np.concatenate(([start_level], c_in))
    widths = np.diff(edges)
    with np.errstate(invalid="ignore"):
        surv = np.exp(-np.outer(risk, levels))
    surv = np.nan_to_num(surv, nan=0.0)
    return surv @ widths


def cox_rmst(model: CoxModel, x, horizon: float) -> float:
    """Restricted mean survival ``int_0^horizon S(t | x) dt`` for one subject."""
    values = getattr(x, "values", x)
    return float(model.rmst(np.asarray(values, dtype=float).reshape(1, -1), horizon)[0])


class _PartialLikelihood:
    """Breslow partial likelihood with risk-set sums over time-sorted rows."""

    def __init__(self, Z, time, event):
        order = np.argsort(time, kind="stable")
        self.Z = Z[order]
        self.t = time[order]
        self.d = event[order]
        # risk set of row i starts at the first row sharing its time
        self.first = np.searchsorted(self.t, self.t, side="left")
        self.ev = np.flatnonzero(self.d)

    def _sums(self, beta):
        eta = self.Z @ beta
        shift = eta.max()
        w = np.exp(eta - shift)
        s0 = np.cumsum(w[::-1])[::-1]
        s1 = np.cumsum((w[:, None] * self.Z)[::-1], axis=0)[::-1]
        return eta, shift, w, s0, s1

    def loglik(self, beta) -> float:
        eta, shift, _, s0, _ = self._sums(beta)
        idx = self.first[self.ev]
        return float(np.sum(eta[self.ev] - shift - np.log(s0[idx])))

    def derivatives(self, beta):
        eta, shift, w, s0, s1 = self._sums(beta)
        idx = self.first[self.ev]
        ll = float(np.sum(eta[self.ev] - shift - np.log(s0[idx])))
        zbar = s1[idx] / s0[idx, None]
        grad = np.sum(self.Z[self.ev] - zbar, axis=0)
        outer = w[:, None, None] * self.Z[:, :, None] * self.Z[:, None, :]
        s2 = np.cumsum(outer[::-1], axis=0)[::-1]
        info = np.sum(s2[idx] / s0[idx, None, None], axis=0) - zbar.T @ zbar
        return ll, grad, info


def cox_fit(features, observed, events) -> CoxModel:
    """Fit a Cox model by damped Newton-Raphson (Breslow ties).

    Covariates are standardised internally. Converges when the gradient
    max-norm drops below 1e-8. Raises :class:`SeparationError` when any
    standardised coefficient exceeds 50 in magnitude.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    time = np.asarray(observed, dtype=float).ravel()
    event = np.asarray(events).astype(bool).ravel()
    if X.shape[0] != time.shape[0] or time.shape != event.shape:
        raise ValueError("features, observed and events must have matching rows")
    if event.sum() < 2:
        raise ValueError("Cox fit needs at least 2 events")

    std = Standardizer.fit(X)
    Z = std.transform(X)
    pl = _PartialLikelihood(Z, time, event)
    beta = np.zeros(Z.shape[1])
    ll, grad, info = pl.derivatives(beta)
    history = [ll]
    converged = False
    for _ in range(MAX_ITER):
        if np.max(np.abs(grad), initial=0.0) < GRAD_TOL:
            converged = True
            break
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + scale * step
            cand_ll = pl.loglik(cand)
            if np.isfinite(cand_ll) and cand_ll >= ll:
                break
            scale *= 0.5
        else:
            # no ascent along the Newton direction: at a numerical optimum
            converged = np.max(np.abs(grad)) < 1e-6
            break
        beta = cand
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError("separation")
        ll, grad, info = pl.derivatives(beta)
        history.append(ll)
    else:
        converged = np.max(np.abs(grad), initial=0.0) < GRAD_TOL
    if not converged:
        raise ConvergenceError(float(np.max(np.abs(grad), initial=0.0)))
    # Monotone likelihood flattens out long before |beta| reaches the bound:
    # the gradient vanishes together with the curvature.
    varying = np.flatnonzero(X.std(axis=0) > 0.0)
    if varying.size and np.linalg.eigvalsh(info[np.ix_(varying, varying)]).min() < SEPARATION_CURVATURE * event.sum():
        raise SeparationError("separation")

    # Breslow cumulative baseline hazard at distinct event times
    risk = np.exp(Z @ beta)
    order = np.argsort(time, kind="stable")
    t_sorted, r_sorted, d_sorted = time[order], risk[order], event[order]
    s0 = np.cumsum(r_sorted[::-1])[::-1]
    first = np.searchsorted(t_sorted, t_sorted, side="left")
    ev_times = np.unique(t_sorted[d_sorted])
    d_at = np.array([d_sorted[t_sorted == t].sum() for t in ev_times], dtype=float)
    denom = s0[first[np.searchsorted(t_sorted, ev_times, side="left")]]
    cumhaz = np.cumsum(d_at / denom)
    return CoxModel(beta, std, ev_times, cumhaz, float(time.max()), tuple(history))
