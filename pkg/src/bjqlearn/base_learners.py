"""Weak learners for boosting: componentwise least squares and CART trees."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class ComponentTerm:
    covariate_index: int
    coefficient: float

    def __post_init__(self):
        if not np.isfinite(self.coefficient):
            raise ValueError("coefficient must be finite")

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.covariate_index >= X.shape[1]:
            raise IndexError(f"covariate {self.covariate_index} out of range")
        return self.coefficient * X[:, self.covariate_index]


def componentwise_ls_fit(
    X: np.ndarray, u: np.ndarray, candidates: Sequence[int] | None = None
) -> ComponentTerm:
    """Pick the single covariate whose simple no-intercept regression on ``u``
    leaves the smallest residual sum of squares.

    Columns with zero sum of squares are skipped; ties go to the smallest
    index. ``candidates`` restricts the scan (used by twin boosting).
    """
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    if X.ndim != 2 or X.shape[0] != u.shape[0] or X.shape[0] == 0:
        raise ValueError("features must be an n x p matrix matching residuals")
    cols = np.arange(X.shape[1]) if candidates is None else np.asarray(sorted(candidates), dtype=int)
    if cols.size == 0:
        raise ValueError("no usable covariate")
    sub = X[:, cols]
    ss = np.einsum("ij,ij->j", sub, sub)
    usable = ss > 0.0
    if not usable.any():
        raise ValueError("no usable covariate")
    xu = sub.T @ u
    # RSS_j = sum(u^2) - (x_j.u)^2 / (x_j.x_j); maximise the reduction
    reduction = np.full(cols.size, -np.inf)
    reduction[usable] = xu[usable] ** 2 / ss[usable]
    best = int(np.argmax(reduction))
    return ComponentTerm(int(cols[best]), float(xu[best] / ss[best]))


@dataclass(frozen=True)
class RegressionTree:
    """Binary tree stored as flat arrays; ``feature == LEAF`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    @property
    def max_feature(self) -> int:
        used = self.feature[self.feature != LEAF]
        return int(used.max()) if used.size else -1

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.max_feature >= X.shape[1]:
            raise IndexError(f"tree uses covariate {self.max_feature}, input has {X.shape[1]}")
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f != LEAF
            if not internal.any():
                break
            r = rows[internal]
            n = node[internal]
            go_left = X[r, f[internal]] <= self.threshold[n]
            node[internal] = np.where(go_left, self.left[n], self.right[n])
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "depth": self.depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=int),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=int),
            np.asarray(d["right"], dtype=int),
            np.asarray(d["value"], dtype=float),
            int(d["depth"]),
        )


def tree_predict(tree: RegressionTree, x) -> float:
    return float(tree.predict(np.asarray(x, dtype=float).reshape(1, -1))[0])


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    n, p = X.shape
    total = y.sum()
    base = total * total / n
    best_gain, best_j, best_thr = -np.inf, -1, 0.0
    lo, hi = min_leaf - 1, n - min_leaf  # left sizes min_leaf .. n - min_leaf
    if lo >= hi:
        return best_gain, best_j, best_thr
    for j in range(p):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cs = np.cumsum(y[order])
        k = np.arange(lo, hi)  # split after position k
        valid = xs[k] < xs[k + 1]
        if not valid.any():
            continue
        k = k[valid]
        nl = k + 1.0
        sl = cs[k]
        sr = total - sl
        gain = sl * sl / nl + sr * sr / (n - nl) - base
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = float(gain[i])
            best_j = j
            best_thr = 0.5 * (xs[k[i]] + xs[k[i] + 1])
    return best_gain, best_j, best_thr


def tree_fit(X: np.ndarray, y: np.ndarray, max_depth: int = 2, min_leaf: int = 5) -> RegressionTree:
    """Greedy least-squares regression tree.

    Splits sit at midpoints between consecutive distinct values; a row goes
    left when its value is <= threshold. Gain ties resolve to the smaller
    covariate index, then the smaller threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValueError("features must be an n x p matrix matching residuals")
    if max_depth < 0 or min_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_leaf >= 1")

    feature, threshold, left, right, value = [], [], [], [], []
    realised_depth = 0
    tol = 1e-12 * max(1.0, float(np.dot(y, y)))

    def grow(idx: np.ndarray, depth: int) -> int:
        nonlocal realised_depth
        node = len(feature)
        ys = y[idx]
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(ys.mean()))
        if depth >= max_depth or idx.size < 2 * min_leaf:
            return node
        _, j, thr = _best_split(X[idx], ys, min_leaf)
        # zero-gain splits are allowed while the node is impure: a depth-2
        # interaction (XOR) has no first-level gain but a perfect second level
        if j < 0 or np.sum((ys - ys.mean()) ** 2) <= tol:
            return node
        mask = X[idx, j] <= thr
        feature[node] = j
        threshold[node] = thr
        realised_depth = max(realised_depth, depth + 1)
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return RegressionTree(
        np.asarray(feature, dtype=int),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=int),
        np.asarray(right, dtype=int),
        np.asarray(value, dtype=float),
        realised_depth,
    )
