"""Synthetic single- and two-stage trials, replication loops and summaries."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .bj_boost import BoostConfig
from .data_model import StageRecord, Subject, TrialDataset, build_history
from .q_learning import Method, Mode, argmax_rows, backward_induction, decision_accuracy, default_config, q_table

log = logging.getLogger(__name__)

ACTIONS = (0, 1)
RESULT_HEADER = ["rep", "method", "n", "stages", "accuracy", "censor_rate", "seed"]
SUMMARY_HEADER = ["method", "n", "min", "q1", "median", "mean", "q3", "max"]
QDUMP_HEADER = ["rep", "method", "subject", "sequence", "true_q", "estimated_q"]

@dataclass(frozen=True)
class DGPConfig:
    beta: tuple = (10.0, 0.4, -1.0, -0.4, -0.01, 0.05, 1.3)
    noise_sd: float = 1.0
    tumor_power: float = 2.3
    censor_quantiles: tuple = (0.2, 0.8)
    stages: int = 1
    literal_censoring: bool = False

    def __post_init__(self):
        if len(self.beta) != 7:
            raise ValueError("beta needs 7 entries (intercept, sex, tumour, log BMI, sqrt age, treatment, interaction)")
        if not self.noise_sd > 0:
            raise ValueError("noise_sd must be positive")
        low, high = self.censor_quantiles
        if not 0.0 <= low < high <= 1.0:
            raise ValueError("censor quantiles must satisfy 0 <= low < high <= 1")
        if self.stages not in (1, 2):
            raise ValueError("stages must be 1 or 2")


@dataclass(frozen=True)
class OracleQ:
    """Noiseless Q-values: ``values[i, j]`` is subject i under ``sequences[j]``."""

    sequences: tuple
    values: np.ndarray

    def decisions(self) -> list:
        return argmax_rows(list(self.sequences), self.values)

    def as_maps(self) -> list[dict]:
        return [dict(zip(self.sequences, row)) for row in self.values]


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def apply_censoring(event_times, low_q: float, high_q: float, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform censoring between two empirical quantiles of the event times.

    Returns ``(Y, delta, C)`` with ``Y = min(T, C)`` and ``delta = T <= C``.
    """
    T = np.asarray(event_times, dtype=float)
    if T.size == 0 or not np.all(np.isfinite(T)):
        raise ValueError("event_times must be non-empty and finite")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    lo, hi = np.quantile(T, [low_q, high_q], method="linear")
    C = rng.uniform(lo, hi, size=T.shape) if hi > lo else np.full(T.shape, lo)
    return np.minimum(T, C), T <= C, C


def _covariates(n: int, rng: np.random.Generator, power: float, stages: int):
    sex = rng.binomial(1, 0.5, n).astype(float)
    bmi = rng.normal(25.0, 5.0, n)
    age = rng.normal(50.0, 10.0, n)
    tumor = rng.uniform(1.0, 3.0, (stages, n))
    powered = tumor**power
    trans = powered - np.median(powered, axis=1, keepdims=True)
    return sex, bmi, age, tumor, trans


def _arm_means(beta, sex, bmi, age, trans_k):
    b0, b1, b2, b3, b4, b5, b6 = beta
    # log/sqrt of non-positive draws (probability < 1e-6) are clamped
    base = b0 + b1 * sex + b2 * trans_k + b3 * np.log(np.maximum(bmi, 1e-8)) + b4 * np.sqrt(np.maximum(age, 0.0))
    return base, base + b5 + b6 * trans_k


def _make_trial(n, seed, config: DGPConfig):
    K = config.stages
    cov_rng, trt_rng, noise_rng, cens_rng = _streams(seed)
    sex, bmi, age, tumor, trans = _covariates(n, cov_rng, config.tumor_power, K)
    A = trt_rng.binomial(1, 0.5, (K, n))
    eps = noise_rng.normal(0.0, config.noise_sd, (K, n))

    q = np.empty((K, n, 2))
    T = np.empty((K, n))
    for k in range(K):
        q0, q1 = _arm_means(config.beta, sex, bmi, age, trans[k])
        q[k, :, 0], q[k, :, 1] = q0, q1
        # survival times are floored at 0; the linear model can dip below
        T[k] = np.maximum(np.where(A[k] == 1, q1, q0) + eps[k], 0.0)

    low, high = config.censor_quantiles
    if K == 1:
        Y, D, C = apply_censoring(T[0], low, high, cens_rng)
        Ys, Ds, R = Y[None], D[None], np.ones((1, n), bool)
    elif config.literal_censoring:
        _, _, C = apply_censoring(T.sum(axis=0), low, high, cens_rng)
        Ys, Ds = np.minimum(T, C), T <= C
        R = np.ones((2, n), bool)
    else:
        _, _, C = apply_censoring(T.sum(axis=0), low, high, cens_rng)
        d1 = T[0] <= C
        y1 = np.minimum(T[0], C)
        d2 = T.sum(axis=0) <= C
        y2 = np.minimum(T[1], np.maximum(C - T[0], 0.0))
        Ys, Ds, R = np.stack([y1, y2]), np.stack([d1, d2]), np.stack([np.ones(n, bool), d1])

    subjects = []
    baseline_names = ("sex", "bmi", "age")
    for i in range(n):
        baseline = list(zip(baseline_names, (sex[i], bmi[i], age[i])))
        blocks = [[(f"tumor_size_{k + 1}", tumor[k, i])] for k in range(K)]
        recs = []
        for k in range(K):
            hist = build_history(baseline, [int(a) for a in A[:k, i]], ACTIONS, blocks[: k + 1])
            recs.append(StageRecord(k + 1, hist, int(A[k, i]), float(Ys[k, i]), bool(Ds[k, i]), bool(R[k, i])))
        subjects.append(Subject(str(i), tuple(recs)))
    dataset = TrialDataset(tuple(subjects), ACTIONS, K)

    if K == 1:
        oracle = OracleQ(((0,), (1,)), q[0].copy())
    else:
        seqs = tuple((a1, a2) for a1 in ACTIONS for a2 in ACTIONS)
        oracle = OracleQ(seqs, np.column_stack([q[0, :, a1] + q[1, :, a2] for a1, a2 in seqs]))
    return dataset, oracle


def gen_single_stage(n: int, seed: int, config: DGPConfig | None = None) -> tuple[TrialDataset, OracleQ]:
    """One-stage trial from the nonlinear tumour-size model."""
    if n < 2:
        raise ValueError("n must be >= 2")
    config = config or DGPConfig()
    if config.stages != 1:
        config = replace(config, stages=1)
    return _make_trial(n, seed, config)


def gen_two_stage(n: int, seed: int, config: DGPConfig | None = None) -> tuple[TrialDataset, OracleQ]:
    """Two-stage trial sharing one censoring time per subject.

    By default the censoring time is spent against cumulative time, so
    stage 2 is only reached by subjects whose stage-1 event was observed.
    ``literal_censoring`` compares each stage time with ``C`` directly.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    config = config or DGPConfig(stages=2)
    if config.stages != 2:
        config = replace(config, stages=2)
    return _make_trial(n, seed, config)


def generate(n: int, seed: int, config: DGPConfig):
    return gen_single_stage(n, seed, config) if config.stages == 1 else gen_two_stage(n, seed, config)


def observed_censor_rate(dataset: TrialDataset) -> float:
    """Share of subjects whose last reached stage is censored."""
    censored = 0
    for s in dataset.subjects:
        last = [r for r in s.stages if r.reached][-1]
        censored += not last.event
    return censored / len(dataset)


@dataclass(frozen=True)
class ReplicationRow:
    rep: int
    method: str
    n: int
    stages: int
    accuracy: float
    censor_rate: float
    seed: int
    error: str = ""


@dataclass
class ReplicationResults:
    rows: list = field(default_factory=list)
    qdump: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.error]

    def accuracies(self, method: str, n: int | None = None) -> np.ndarray:
        return np.array([
            r.accuracy for r in self.rows
            if r.method == method and (n is None or r.n == n) and not r.error
        ])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_HEADER)
            for r in self.rows:
                acc = "" if r.error else _fmt(r.accuracy)
                w.writerow([r.rep, r.method, r.n, r.stages, acc, _fmt(r.censor_rate), r.seed])

    def write_qdump(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(QDUMP_HEADER)
            w.writerows(self.qdump)

    @classmethod
    def read_csv(cls, path) -> "ReplicationResults":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(RESULT_HEADER) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            for line, rec in enumerate(reader, start=2):
                try:
                    acc = rec["accuracy"]
                    rows.append(ReplicationRow(
                        int(rec["rep"]), rec["method"], int(rec["n"]), int(rec["stages"]),
                        float(acc) if acc else math.nan, float(rec["censor_rate"]), int(rec["seed"]),
                        "" if acc else "missing",
                    ))
                except ValueError as exc:
                    raise ValueError(f"{path}, line {line}: {exc}") from exc
        return cls(rows)


def _fmt(x: float) -> str:
    return "nan" if x != x else format(x, ".10g")


def _seq_label(seq) -> str:
    return "".join(str(a) for a in seq)


def method_config(method: Method, overrides: dict | None) -> BoostConfig | None:
    """Default boosting config for ``method`` with ``overrides`` applied."""
    cfg = default_config(method)
    if cfg is None or not overrides:
        return cfg
    return replace(cfg, **overrides)


def _one_replicate(args):
    rep, methods, n, config, base_seed, mode, overrides, dump_q = args
    seed = base_seed + rep
    dataset, oracle = generate(n, seed, config)
    truth = oracle.decisions()
    rate = observed_censor_rate(dataset)
    rows, dump = [], []
    for method in methods:
        name = method.cli_name
        try:
            cfg = method_config(method, overrides)
            policy = backward_induction(dataset, method, cfg, mode)
            seqs, table = q_table(policy, dataset)
            est = argmax_rows(seqs, table)
            acc = decision_accuracy(est, truth)
            rows.append(ReplicationRow(rep, name, n, config.stages, acc, rate, seed))
            if dump_q:
                col = {s: j for j, s in enumerate(seqs)}
                for i in range(n):
                    for j, s in enumerate(oracle.sequences):
                        dump.append([rep, name, i, _seq_label(s), _fmt(oracle.values[i, j]), _fmt(table[i, col[s]])])
        except Exception as exc:  # recorded, never fatal for the run
            log.warning("rep %d, %s failed: %s", rep, name, exc)
            rows.append(ReplicationRow(rep, name, n, config.stages, math.nan, rate, seed, str(exc)))
    return rep, rows, dump


def run_replications(
    methods: Sequence,
    n: int,
    stages: int = 1,
    reps: int = 20,
    base_seed: int = 0,
    *,
    mode: Mode = Mode.ADDITIVE,
    literal_censoring: bool = False,
    dgp: DGPConfig | None = None,
    boost_overrides: dict | None = None,
    dump_q: bool = False,
    jobs: int = 1,
) -> ReplicationResults:
    """Fit every method on ``reps`` simulated trials (seed ``base_seed + r``)
    and score decisions against the oracle."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    methods = [Method.parse(m) if not isinstance(m, Method) else m for m in methods]
    base = dgp or DGPConfig()
    config = replace(base, stages=stages, literal_censoring=literal_censoring)
    tasks = [(r, methods, n, config, base_seed, Mode(mode), boost_overrides, dump_q) for r in range(reps)]
    if jobs > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_one_replicate, tasks))
    else:
        outputs = [_one_replicate(t) for t in tasks]
    outputs.sort(key=lambda o: o[0])
    results = ReplicationResults()
    for _, rows, dump in outputs:
        results.rows.extend(rows)
        results.qdump.extend(dump)
    return results


@dataclass(frozen=True)
class SummaryRow:
    method: str
    n: int
    min: float
    q1: float
    median: float
    mean: float
    q3: float
    max: float

    def as_list(self) -> list:
        return [self.method, self.n] + [_fmt(v) for v in (self.min, self.q1, self.median, self.mean, self.q3, self.max)]


def summarize(results: ReplicationResults | Iterable[ReplicationRow]) -> list[SummaryRow]:
    """Six-number summaries of accuracy per (method, n), failures excluded."""
    rows = results.rows if isinstance(results, ReplicationResults) else list(results)
    groups: dict[tuple, list] = {}
    for r in rows:
        if not r.error and not math.isnan(r.accuracy):
            groups.setdefault((r.method, r.n), []).append(r.accuracy)
    out = []
    for (method, n), accs in sorted(groups.items()):
        a = np.asarray(accs)
        q = np.quantile(a, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
        out.append(SummaryRow(method, n, q[0], q[1], q[2], float(a.mean()), q[3], q[4]))
    return out


def write_summary_csv(summary: Sequence[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in summary:
            w.writerow(row.as_list())


def format_summary(summary: Sequence[SummaryRow]) -> str:
    lines = [f"{'Method':<8} {'n':>5} {'Min':>7} {'1st Qu.':>7} {'Median':>7} {'Mean':>7} {'3rd Qu.':>7} {'Max':>7}"]
    for s in summary:
        lines.append(
            f"{s.method:<8} {s.n:>5} {s.min:7.4f} {s.q1:7.4f} {s.median:7.4f} {s.mean:7.4f} {s.q3:7.4f} {s.max:7.4f}"
        )
    return "\n".join(lines)
