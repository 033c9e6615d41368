"""Buckley-James fitting engines: imputation, boosting, the classical
iterative linear estimator and cross-validated tuning."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .base_learners import ComponentTerm, RegressionTree, componentwise_ls_fit, tree_fit
from .kaplan_meier import KMCurve, km_fit, km_tail_expectations

log = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e8
CYCLE_RATIO = 1e-3


class Learner(str, Enum):
    COMPONENTWISE_LS = "componentwise_ls"
    TREE = "tree"


class InitMode(str, Enum):
    MEAN = "mean"
    LEAST_SQUARES = "least_squares"


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"diverged at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class BoostConfig:
    iterations: int = 500
    learning_rate: float = 0.1
    learner: Learner = Learner.TREE
    max_depth: int = 2
    min_leaf: int = 5
    twin: bool = False
    init_mode: InitMode = InitMode.MEAN

    def __post_init__(self):
        object.__setattr__(self, "learner", Learner(self.learner))
        object.__setattr__(self, "init_mode", InitMode(self.init_mode))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError("max_depth must be >= 0 and min_leaf >= 1")

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "learning_rate": self.learning_rate,
            "learner": self.learner.value,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "twin": self.twin,
            "init_mode": self.init_mode.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostConfig":
        return cls(**d)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(mean, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.mean.shape[0]:
            raise ValueError(f"expected {self.mean.shape[0]} covariates, got {X.shape[1]}")
        return (X - self.mean) / self.scale


@dataclass(frozen=True)
class BoostModel:
    """``offset + init_coefficients . z + learning_rate * sum(term(z))``.

    ``z`` is the standardised input. Componentwise terms index the design
    ``[1, z]`` so that index 0 is an intercept update; tree terms index
    ``z`` directly.
    """

    offset: float
    learning_rate: float
    learner: Learner
    standardizer: Standardizer
    terms: tuple = ()
    init_coefficients: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return int(self.standardizer.mean.shape[0])

    def _design(self, Z: np.ndarray) -> np.ndarray:
        if self.learner is Learner.COMPONENTWISE_LS:
            return np.column_stack([np.ones(Z.shape[0]), Z])
        return Z

    def predict(self, X) -> np.ndarray:
        Z = self.standardizer.transform(X)
        D = self._design(Z)
        f = np.full(Z.shape[0], self.offset)
        if self.init_coefficients is not None:
            f = f + Z @ self.init_coefficients
        for term in self.terms:
            f = f + self.learning_rate * term.predict(D)
        return f

    def selected_covariates(self) -> set[int]:
        """Indices (in the original covariate order) used by any term."""
        out = set()
        for term in self.terms:
            if isinstance(term, ComponentTerm):
                if term.covariate_index > 0:
                    out.add(term.covariate_index - 1)
            else:
                out.update(int(j) for j in term.feature if j >= 0)
        return out

    def to_dict(self) -> dict:
        if self.learner is Learner.COMPONENTWISE_LS:
            terms = [[t.covariate_index, t.coefficient] for t in self.terms]
        else:
            terms = [t.to_dict() for t in self.terms]
        return {
            "kind": "boost",
            "offset": self.offset,
            "learning_rate": self.learning_rate,
            "learner": self.learner.value,
            "standardization": {
                "mean": self.standardizer.mean.tolist(),
                "scale": self.standardizer.scale.tolist(),
            },
            "init_coefficients": None if self.init_coefficients is None else self.init_coefficients.tolist(),
            "terms": terms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostModel":
        learner = Learner(d["learner"])
        if learner is Learner.COMPONENTWISE_LS:
            terms = tuple(ComponentTerm(int(j), float(b)) for j, b in d["terms"])
        else:
            terms = tuple(RegressionTree.from_dict(t) for t in d["terms"])
        std = d["standardization"]
        init = d.get("init_coefficients")
        return cls(
            offset=float(d["offset"]),
            learning_rate=float(d["learning_rate"]),
            learner=learner,
            standardizer=Standardizer(np.asarray(std["mean"], float), np.asarray(std["scale"], float)),
            terms=terms,
            init_coefficients=None if init is None else np.asarray(init, float),
        )


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: np.ndarray
    iterations: int = 0
    converged: bool = True
    oscillated: bool = False

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.coefficients.shape[0]:
            raise ValueError(f"expected {self.coefficients.shape[0]} covariates, got {X.shape[1]}")
        return self.intercept + X @ self.coefficients

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "intercept": self.intercept,
            "coefficients": self.coefficients.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "oscillated": self.oscillated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            float(d["intercept"]),
            np.asarray(d["coefficients"], dtype=float),
            int(d.get("iterations", 0)),
            bool(d.get("converged", True)),
            bool(d.get("oscillated", False)),
        )


def predict(model, x) -> float:
    """Evaluate a fitted model at a single covariate vector."""
    values = getattr(x, "values", x)
    return float(model.predict(np.asarray(values, dtype=float).reshape(1, -1))[0])


def bj_impute(observed, events, fitted, curve: KMCurve) -> np.ndarray:
    """Buckley-James imputation ``Y* = Y`` for events and
    ``f + E[e | e > Y - f]`` for censored rows.

    Censored rows whose residual has no KM mass above it keep ``Y``.
    """
    y = np.asarray(observed, dtype=float)
    d = np.asarray(events, dtype=bool)
    f = np.asarray(fitted, dtype=float)
    out = y.copy()
    cens = ~d
    if cens.any():
        tail = km_tail_expectations(curve, y[cens] - f[cens])
        imputed = f[cens] + tail
        ok = np.isfinite(imputed)
        vals = y[cens]
        vals[ok] = np.maximum(imputed[ok], vals[ok])
        out[cens] = vals
    return out


def _check_inputs(X, y, d, min_rows: int):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=float).ravel()
    d = np.asarray(d).astype(bool).ravel()
    if X.shape[0] != y.shape[0] or y.shape != d.shape:
        raise ValueError("features, observed and events must have matching rows")
    if y.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    if not d.any():
        raise ValueError("all censored")
    return X, y, d


def _ols(D: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    return coef


def _boost_loop(D, y, d, f, config: BoostConfig, candidates=None):
    nu = config.learning_rate
    terms = []
    curve = km_fit(y - f, d)
    for m in range(1, config.iterations + 1):
        ystar = bj_impute(y, d, f, curve)
        u = ystar - f
        if config.learner is Learner.COMPONENTWISE_LS:
            g = componentwise_ls_fit(D, u, candidates)
        else:
            g = tree_fit(D, u, config.max_depth, config.min_leaf)
        f = f + nu * g.predict(D)
        if not np.all(np.isfinite(f)) or np.max(np.abs(f)) > DIVERGENCE_BOUND:
            raise DivergenceError(m)
        terms.append(g)
        curve = km_fit(y - f, d)
    return terms, f


def bj_boost_fit(features, observed, events, config: BoostConfig | None = None) -> BoostModel:
    """Buckley-James boosting with componentwise least squares or trees.

    Each iteration imputes censored outcomes against the current fit, fits
    the base learner to ``Y* - f``, takes a ``learning_rate`` step and
    refreshes the residual KM curve.
    """
    config = config or BoostConfig()
    X, y, d = _check_inputs(features, observed, events, min_rows=10)
    std = Standardizer.fit(X)
    Z = std.transform(X)
    componentwise = config.learner is Learner.COMPONENTWISE_LS
    D = np.column_stack([np.ones(Z.shape[0]), Z]) if componentwise else Z

    init = None
    if config.init_mode is InitMode.LEAST_SQUARES:
        coef = _ols(np.column_stack([np.ones(Z.shape[0]), Z]), y)
        offset, init = float(coef[0]), coef[1:]
        f0 = offset + Z @ init
    else:
        offset = float(y.mean())
        f0 = np.full(y.shape[0], offset)

    terms, _ = _boost_loop(D, y, d, f0, config)
    if componentwise and config.twin:
        chosen = sorted({t.covariate_index for t in terms})
        log.debug("twin boosting second round over columns %s", chosen)
        terms, _ = _boost_loop(D, y, d, f0, config, candidates=chosen)

    return BoostModel(
        offset=offset,
        learning_rate=config.learning_rate,
        learner=config.learner,
        standardizer=std,
        terms=tuple(terms),
        init_coefficients=init,
    )


def bj_linear_fit(features, observed, events, max_iter: int = 100, tol: float = 1e-8) -> LinearModel:
    """Classical Buckley-James linear regression by fixed-point iteration.

    Starts from least squares on the observed times and alternates residual
    KM, imputation and least squares. A two-cycle is resolved by averaging
    the pair and flagging ``oscillated``.
    """
    X, y, d = _check_inputs(features, observed, events, min_rows=1)
    D = np.column_stack([np.ones(X.shape[0]), X])
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise ValueError("design matrix is rank deficient")

    beta = _ols(D, y)
    history = [beta]
    for it in range(1, max_iter + 1):
        f = D @ beta
        ystar = bj_impute(y, d, f, km_fit(y - f, d))
        new = _ols(D, ystar)
        step = np.max(np.abs(new - beta))
        if step < tol:
            return LinearModel(float(new[0]), new[1:], it, True, False)
        # two-cycle: back where we were two steps ago, far from the last one
        if len(history) >= 2 and np.max(np.abs(new - history[-2])) < max(tol, CYCLE_RATIO * step):
            avg = 0.5 * (new + beta)
            return LinearModel(float(avg[0]), avg[1:], it, True, True)
        history.append(new)
        beta = new
    log.warning("Buckley-James linear fit did not converge in %d iterations", max_iter)
    return LinearModel(float(beta[0]), beta[1:], max_iter, False, False)


def _stratified_folds(d: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    assign = np.empty(d.shape[0], dtype=int)
    for group in (np.flatnonzero(d), np.flatnonzero(~d)):
        perm = rng.permutation(group)
        assign[perm] = np.arange(perm.size) % folds
    return assign


def cv_tune(
    features, observed, events, grid: Sequence[BoostConfig], folds: int = 5, seed: int = 0
) -> BoostConfig:
    """Pick the grid config with the lowest mean validation MSE.

    Folds are stratified on the event indicator. Validation loss uses
    uncensored rows only. Ties go to fewer iterations, then the smaller
    learning rate.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if not grid:
        raise ValueError("grid must be non-empty")
    X, y, d = _check_inputs(features, observed, events, min_rows=folds)
    if len(grid) == 1:
        return grid[0]

    for attempt in range(6):
        if attempt == 5:
            raise ValueError("could not draw folds with training events in every split")
        assign = _stratified_folds(d, folds, np.random.default_rng([seed, attempt]))
        if all(d[assign != k].any() for k in range(folds)):
            break

    scores = []
    for config in grid:
        errs = []
        for k in range(folds):
            train, valid = assign != k, (assign == k) & d
            if not valid.any():
                continue
            model = bj_boost_fit(X[train], y[train], d[train], config)
            errs.append(float(np.mean((model.predict(X[valid]) - y[valid]) ** 2)))
        scores.append(float(np.mean(errs)) if errs else np.inf)

    order = sorted(range(len(grid)), key=lambda i: (scores[i], grid[i].iterations, grid[i].learning_rate))
    best = grid[order[0]]
    log.info("cv_tune picked %s (mse %.4g)", best, scores[order[0]])
    return best
