"""Stage-wise counterfactual Q estimation and treatment-rule extraction."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .bj_boost import BoostConfig, BoostModel, Learner, LinearModel, bj_boost_fit, bj_linear_fit, cv_tune
from .cox_baseline import CoxModel, cox_fit
from .data_model import Subject, TrialDataset, treatment_column

log = logging.getLogger(__name__)

MIN_ARM_SIZE = 10


class Method(str, Enum):
    BJ = "bj"
    BJ_LS = "bj_ls"
    BJ_TREE = "bj_tree"
    COX = "cox"

    @classmethod
    def parse(cls, name: str) -> "Method":
        try:
            return cls(str(name).strip().lower().replace("-", "_"))
        except ValueError:
            choices = ", ".join(m.cli_name for m in cls)
            raise ValueError(f"unknown method {name!r}; choose from {{{choices}}}") from None

    @property
    def cli_name(self) -> str:
        return self.value.replace("_", "-")


class Mode(str, Enum):
    ADDITIVE = "additive"
    BACKWARD = "backward"


class StageFitError(RuntimeError):
    pass


def default_config(method: Method) -> BoostConfig | None:
    method = Method(method)
    if method is Method.BJ_TREE:
        return BoostConfig(learner=Learner.TREE)
    if method is Method.BJ_LS:
        return BoostConfig(learner=Learner.COMPONENTWISE_LS, twin=True)
    return None


def fit_arm_model(method: Method, X, y, d, config: BoostConfig | None = None):
    method = Method(method)
    if isinstance(config, (list, tuple)):
        config = None
    if method is Method.BJ:
        return bj_linear_fit(X, y, d)
    if method is Method.COX:
        return cox_fit(X, y, d)
    return bj_boost_fit(X, y, d, config or default_config(method))


def model_from_dict(d: dict):
    kind = d["kind"]
    if kind == "boost":
        return BoostModel.from_dict(d)
    if kind == "linear":
        return LinearModel.from_dict(d)
    if kind == "cox":
        return CoxModel.from_dict(d)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class QStageModel:
    stage_index: int
    method: Method
    per_arm_models: Mapping
    feature_names: tuple = ()

    def predict(self, X) -> dict:
        """Per-action Q-values for each row of ``X``."""
        return {a: m.predict(X) for a, m in self.per_arm_models.items()}


@dataclass(frozen=True)
class Policy:
    stage_models: tuple  # stage 1 first
    action_set: tuple
    method: Method
    mode: Mode = Mode.ADDITIVE
    config: BoostConfig | None = None

    @property
    def num_stages(self) -> int:
        return len(self.stage_models)

    def stage(self, k: int) -> QStageModel:
        return self.stage_models[k - 1]

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "mode": self.mode.value,
            "action_set": list(self.action_set),
            "config": None if self.config is None else self.config.to_dict(),
            "stages": [
                {
                    "stage_index": s.stage_index,
                    "feature_names": list(s.feature_names),
                    "models": [{"action": a, "model": m.to_dict()} for a, m in s.per_arm_models.items()],
                }
                for s in self.stage_models
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        method = Method(d["method"])
        stages = tuple(
            QStageModel(
                s["stage_index"],
                method,
                {m["action"]: model_from_dict(m["model"]) for m in s["models"]},
                tuple(s.get("feature_names", ())),
            )
            for s in d["stages"]
        )
        config = None if d.get("config") is None else BoostConfig.from_dict(d["config"])
        return cls(stages, tuple(d["action_set"]), method, Mode(d.get("mode", "additive")), config)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Policy":
        return cls.from_dict(json.loads(text))


def fit_stage_q(
    dataset: TrialDataset,
    stage: int,
    targets=None,
    method: Method = Method.BJ_TREE,
    config: BoostConfig | Sequence[BoostConfig] | None = None,
    cv_folds: int = 5,
    seed: int = 0,
) -> QStageModel:
    """Fit one outcome model per action on the subjects reaching ``stage``.

    ``targets`` (aligned with those subjects) replaces the observed stage
    times when given; the stage event indicator always supplies censoring.
    A list of configs is a tuning grid, resolved per arm by ``cv_tune``.
    """
    method = Method(method)
    sd = dataset.stage_data(stage)
    y = sd.time if targets is None else np.asarray(targets, dtype=float)
    if y.shape != sd.time.shape:
        raise ValueError(f"stage {stage}: {y.shape[0]} targets for {sd.time.shape[0]} subjects")
    models = {}
    for a in dataset.action_set:
        arm = sd.treatment == a
        if not arm.any():
            raise StageFitError(f"positivity violated at stage {stage}, action {a}")
        if arm.sum() < MIN_ARM_SIZE:
            raise StageFitError(f"stage {stage}, action {a}: only {arm.sum()} subjects")
        try:
            cfg = config
            if isinstance(config, (list, tuple)) and method in (Method.BJ_LS, Method.BJ_TREE):
                cfg = cv_tune(sd.X[arm], y[arm], sd.event[arm], list(config), cv_folds, seed)
                log.info("stage %d, action %s: tuned to %s", stage, a, cfg)
            models[a] = fit_arm_model(method, sd.X[arm], y[arm], sd.event[arm], cfg)
        except (ValueError, RuntimeError) as exc:
            raise StageFitError(f"stage {stage}, action {a}: {exc}") from exc
    return QStageModel(stage, method, models, sd.names)


def _stage_matrix(dataset: TrialDataset, stage: int, prefix: Sequence, rows=None) -> np.ndarray:
    """Recorded stage histories with treatment indicators set to ``prefix``."""
    subjects = dataset.subjects if rows is None else [dataset.subjects[i] for i in rows]
    recs = [s.stage(stage) for s in subjects]
    if not recs:
        return np.empty((0, 0))
    names = recs[0].history.names
    X = np.array([r.history.values for r in recs], dtype=float)
    for l, act in enumerate(prefix):
        for a in dataset.action_set[1:]:
            col = treatment_column(l + 1, a)
            if col in names:
                X[:, names.index(col)] = 1.0 if act == a else 0.0
    return X


def backward_induction(
    dataset: TrialDataset,
    method: Method = Method.BJ_TREE,
    config: BoostConfig | None = None,
    mode: Mode = Mode.BACKWARD,
    cv_folds: int = 5,
    seed: int = 0,
) -> Policy:
    """Estimate every stage's Q-function.

    ``backward``: stage K uses its own outcomes; stage k < K regresses the
    pseudo-outcome ``Y_k + max_a Q_{k+1}`` (continuation is 0 for subjects
    not reaching k + 1). ``additive``: each stage is fitted on its own
    outcomes and sequences are scored by summing stage Q-values.
    """
    method, mode = Method(method), Mode(mode)
    K = dataset.num_stages
    fitted: dict[int, QStageModel] = {}
    for k in range(K, 0, -1):
        targets = None
        if mode is Mode.BACKWARD and k < K:
            sd = dataset.stage_data(k)
            nxt = fitted[k + 1]
            cont = np.zeros(sd.rows.shape[0])
            reach_next = np.array([dataset.subjects[i].stage(k + 1).reached for i in sd.rows], dtype=bool)
            if reach_next.any():
                rows = sd.rows[reach_next]
                Xn = _stage_matrix(dataset, k + 1, (), rows)
                cont[reach_next] = np.max(np.column_stack(list(nxt.predict(Xn).values())), axis=1)
            targets = sd.time + cont
        try:
            fitted[k] = fit_stage_q(dataset, k, targets, method, config, cv_folds, seed)
        except StageFitError as exc:
            raise StageFitError(f"backward induction, {exc}") from exc
    cfg = config if isinstance(config, BoostConfig) else default_config(method)
    return Policy(tuple(fitted[k] for k in range(1, K + 1)), dataset.action_set, method, mode, cfg)


def q_table(policy: Policy, dataset: TrialDataset) -> tuple[list[tuple], np.ndarray]:
    """Sequence values for every subject: returns the sequences (in
    lexicographic order) and an ``n x len(sequences)`` matrix.

    Additive mode sums per-stage Q-values over the stages each subject
    reached. Backward mode scores ``(a_1, ..., a_K)`` as
    ``Q_1(a_1) + sum_{k>1} [Q_k(a_k) - max_a Q_k(a)]``, which ranks
    sequences consistently with the stage-wise argmax rule.
    """
    A = policy.action_set
    K = policy.num_stages
    if dataset.num_stages < K:
        raise ValueError(f"dataset has {dataset.num_stages} stages, policy needs {K}")
    n = len(dataset)
    reached = np.array([[s.stage(k).reached for k in range(1, K + 1)] for s in dataset.subjects], dtype=bool)
    reached = reached.reshape(n, K)
    # stage k value per prefix (a_1..a_{k-1}) and action a_k
    stage_vals: dict[tuple, np.ndarray] = {}
    for k in range(1, K + 1):
        sm = policy.stage(k)
        for prefix in itertools.product(A, repeat=k - 1):
            preds = sm.predict(_stage_matrix(dataset, k, prefix))
            M = np.column_stack([preds[a] for a in A])
            if policy.mode is Mode.BACKWARD and k > 1:
                M = M - M.max(axis=1, keepdims=True)
            M = np.where(reached[:, [k - 1]], M, 0.0)
            for j, a in enumerate(A):
                stage_vals[prefix + (a,)] = M[:, j]
    sequences = sorted(itertools.product(A, repeat=K))
    table = np.zeros((n, len(sequences)))
    for c, seq in enumerate(sequences):
        for k in range(1, K + 1):
            table[:, c] += stage_vals[seq[:k]]
    return sequences, table


def q_values(policy: Policy, subject: Subject) -> dict:
    """Sequence -> Q-value map for one subject (action keys when K = 1)."""
    if len(subject.stages) < policy.num_stages:
        raise ValueError(f"subject {subject.id} lacks history for stage {len(subject.stages) + 1}")
    ds = TrialDataset((subject,), policy.action_set, policy.num_stages)
    seqs, table = q_table(policy, ds)
    if policy.num_stages == 1:
        return {s[0]: float(v) for s, v in zip(seqs, table[0])}
    return {s: float(v) for s, v in zip(seqs, table[0])}


def optimal_decision(qmap: Mapping):
    """Argmax of a Q map; ties go to the lexicographically smallest key."""
    if not qmap:
        raise ValueError("empty Q map")
    keys = sorted(qmap)
    best = keys[0]
    for k in keys[1:]:
        if qmap[k] > qmap[best]:
            best = k
    return best


def argmax_rows(sequences: Sequence, table: np.ndarray) -> list:
    """Row-wise :func:`optimal_decision` for a table from :func:`q_table`."""
    order = sorted(range(len(sequences)), key=lambda i: sequences[i])
    sub = table[:, order]
    idx = np.argmax(sub, axis=1)  # first maximum = smallest sequence
    return [sequences[order[i]] for i in idx]


def decision_accuracy(estimated: Sequence, oracle: Sequence) -> float:
    if len(estimated) != len(oracle):
        raise ValueError(f"length mismatch: {len(estimated)} vs {len(oracle)}")
    if not estimated:
        raise ValueError("no decisions to score")
    return sum(e == o for e, o in zip(estimated, oracle)) / len(estimated)
