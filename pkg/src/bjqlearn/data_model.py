"""Record types for multi-stage censored trial data, plus validation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

Action = Hashable


@dataclass(frozen=True)
class CovariateVector:
    values: tuple
    names: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        if len(self.values) != len(self.names) or not self.values:
            raise ValueError("values and names must have equal length >= 1")

    @property
    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def __len__(self):
        return len(self.values)


def treatment_column(stage: int, action: Action) -> str:
    return f"A{stage}={action}"


def build_history(
    covariates: Sequence[tuple[str, float]],
    past_actions: Sequence[Action],
    action_set: Sequence[Action],
    stage_covariates: Sequence[Sequence[tuple[str, float]]] = (),
) -> CovariateVector:
    """Flatten ``(B0, X1, A1, ..., Xk)`` into one covariate vector.

    ``covariates`` holds the baseline block; ``stage_covariates[l]`` the
    block observed at stage ``l + 1``. Past treatments are one-hot encoded
    against the first action of ``action_set`` as the reference level.
    """
    names, values = [], []
    for name, value in covariates:
        names.append(name)
        values.append(value)
    for l, block in enumerate(stage_covariates):
        for name, value in block:
            names.append(name)
            values.append(value)
        if l < len(past_actions):
            for a in action_set[1:]:
                names.append(treatment_column(l + 1, a))
                values.append(1.0 if past_actions[l] == a else 0.0)
    return CovariateVector(tuple(values), tuple(names))


def with_past_actions(history: CovariateVector, past_actions: Sequence[Action], action_set) -> CovariateVector:
    """Rewrite the treatment-indicator columns of ``history`` for a
    hypothetical sequence of earlier actions."""
    lookup = {}
    for l, act in enumerate(past_actions):
        for a in action_set[1:]:
            lookup[treatment_column(l + 1, a)] = 1.0 if act == a else 0.0
    if not lookup:
        return history
    values = tuple(lookup.get(n, v) for n, v in zip(history.names, history.values))
    return CovariateVector(values, history.names)


@dataclass(frozen=True)
class StageRecord:
    stage_index: int
    history: CovariateVector
    treatment: Action
    observed_time: float
    event: bool
    reached: bool = True

    def __post_init__(self):
        if self.stage_index < 1:
            raise ValueError("stage_index must be >= 1")
        if self.reached and not self.observed_time >= 0.0:
            raise ValueError("observed_time must be non-negative")


@dataclass(frozen=True)
class Subject:
    id: str
    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    def stage(self, k: int) -> StageRecord:
        if not 1 <= k <= len(self.stages):
            raise KeyError(f"subject {self.id} has no stage {k}")
        return self.stages[k - 1]


@dataclass(frozen=True)
class StageData:
    """Design matrices for one stage, restricted to subjects reaching it."""

    rows: np.ndarray  # positions in TrialDataset.subjects
    X: np.ndarray
    treatment: np.ndarray
    time: np.ndarray
    event: np.ndarray
    names: tuple


@dataclass(frozen=True)
class TrialDataset:
    subjects: tuple
    action_set: tuple
    num_stages: int

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "action_set", tuple(self.action_set))

    def __len__(self):
        return len(self.subjects)

    def stage_data(self, k: int, reached_only: bool = True) -> StageData:
        rows, X, A, Y, D = [], [], [], [], []
        names = None
        for i, s in enumerate(self.subjects):
            rec = s.stage(k)
            if reached_only and not rec.reached:
                continue
            if names is None:
                names = rec.history.names
            elif rec.history.names != names:
                raise ValueError(f"subject {s.id}: stage {k} covariate names differ from other subjects")
            rows.append(i)
            X.append(rec.history.values)
            A.append(rec.treatment)
            Y.append(rec.observed_time)
            D.append(rec.event)
        p = len(names) if names else 0
        treatment = np.empty(len(A), dtype=object)
        treatment[:] = A
        return StageData(
            np.asarray(rows, dtype=int),
            np.asarray(X, dtype=float).reshape(len(rows), p),
            treatment,
            np.asarray(Y, dtype=float),
            np.asarray(D, dtype=bool),
            tuple(names or ()),
        )


@dataclass(frozen=True)
class StageSummary:
    stage: int
    n_reached: int
    observed_actions: tuple
    action_counts: dict
    censoring_rate: float


@dataclass(frozen=True)
class ValidationReport:
    stages: tuple
    violations: tuple = ()
    warnings: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_dataset(dataset: TrialDataset) -> ValidationReport:
    """Check positivity, finiteness and monotone ``reached`` flags.

    Problems are collected in the report rather than raised.
    """
    if not dataset.subjects:
        raise ValueError("dataset is empty")
    violations: list[str] = []
    warnings: list[str] = []
    K = dataset.num_stages

    for s in dataset.subjects:
        if len(s.stages) != K:
            violations.append(f"subject {s.id}: {len(s.stages)} stages, expected {K}")
        if [r.stage_index for r in s.stages] != list(range(1, len(s.stages) + 1)):
            violations.append(f"subject {s.id}: stage indices are not 1..{len(s.stages)}")
        dropped = False
        for r in s.stages:
            if dropped and r.reached:
                violations.append(f"subject {s.id}: reached again at stage {r.stage_index} after dropping out")
            dropped = dropped or not r.reached
            if not r.history.is_finite:
                violations.append(f"subject {s.id}: non-finite covariates at stage {r.stage_index}")
            if r.treatment not in dataset.action_set:
                violations.append(f"subject {s.id}: treatment {r.treatment!r} not in action set")

    summaries = []
    for k in range(1, K + 1):
        recs = [s.stages[k - 1] for s in dataset.subjects if len(s.stages) >= k and s.stages[k - 1].reached]
        counts = {a: 0 for a in dataset.action_set}
        for r in recs:
            if r.treatment in counts:
                counts[r.treatment] += 1
        observed = tuple(a for a in dataset.action_set if counts[a] > 0)
        if not recs:
            violations.append(f"no subject reaches stage {k}")
            rate = float("nan")
        else:
            rate = sum(not r.event for r in recs) / len(recs)
            if rate == 1.0:
                warnings.append(f"stage {k}: every observation is censored")
        for a in dataset.action_set:
            if recs and counts[a] == 0:
                violations.append(f"action {a} unobserved at stage {k}")
        summaries.append(StageSummary(k, len(recs), observed, counts, rate))

    return ValidationReport(tuple(summaries), tuple(violations), tuple(warnings))
