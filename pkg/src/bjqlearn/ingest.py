"""Trial CSV ingestion and the synthetic two-stage split of one-stage data."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import StageRecord, Subject, TrialDataset, build_history

MISSING = {"", "na", "nan", "null", "."}


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for a one-row-per-subject trial export.

    ``treatment_map`` recodes raw arm codes to actions; codes listed in
    ``drop_codes`` are filtered out, anything else unmapped is an error.
    Without a map, raw codes are used as actions (integers when they parse).
    """

    time: str = "days"
    event: str = "cens"
    treatment: str = "arms"
    covariates: tuple = ()
    id: str | None = None
    treatment_map: dict | None = None
    drop_codes: frozenset = field(default_factory=frozenset)
    impute_missing: bool = False


def _action(code: str):
    try:
        return int(code)
    except ValueError:
        return code


def _number(raw: str, row: int, col: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise IngestError(f"row {row}, column {col!r}: cannot parse {raw!r} as a number") from None
    if not math.isfinite(value):
        raise IngestError(f"row {row}, column {col!r}: non-finite value {raw!r}")
    return value


def _event(raw: str, row: int, col: str) -> bool:
    s = raw.strip().lower()
    if s in ("1", "1.0", "true", "t", "yes"):
        return True
    if s in ("0", "0.0", "false", "f", "no"):
        return False
    raise IngestError(f"row {row}, column {col!r}: event indicator {raw!r} is not 0/1")


def read_trial_csv(path, schema: CsvSchema) -> TrialDataset:
    """Read a single-stage trial CSV into a :class:`TrialDataset` (K = 1)."""
    path = Path(path)
    if not schema.covariates:
        raise IngestError("schema must name at least one covariate column")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise IngestError(f"{path}: empty file")
        wanted = [schema.time, schema.event, schema.treatment, *schema.covariates]
        if schema.id:
            wanted.append(schema.id)
        for col in wanted:
            if col not in header:
                raise IngestError(f"{path}: unknown column {col!r} (have {', '.join(header)})")
        records = list(reader)
    if not records:
        raise IngestError(f"{path}: no data rows")

    tmap = None if schema.treatment_map is None else {str(k): v for k, v in schema.treatment_map.items()}
    drop = {str(c) for c in schema.drop_codes}
    parsed = []
    for line, rec in enumerate(records, start=2):
        code = (rec[schema.treatment] or "").strip()
        if code in drop:
            continue
        if tmap is not None:
            if code not in tmap:
                raise IngestError(f"row {line}: treatment code {code!r} is not mapped")
            action = tmap[code]
        else:
            if code.lower() in MISSING:
                raise IngestError(f"row {line}: missing treatment")
            action = _action(code)
        t_raw = (rec[schema.time] or "").strip()
        e_raw = (rec[schema.event] or "").strip()
        if t_raw.lower() in MISSING or e_raw.lower() in MISSING:
            raise IngestError(f"row {line}: missing time or event")
        time = _number(t_raw, line, schema.time)
        if time < 0:
            raise IngestError(f"row {line}, column {schema.time!r}: negative time {time}")
        event = _event(e_raw, line, schema.event)
        covs = []
        for col in schema.covariates:
            raw = (rec[col] or "").strip()
            if raw.lower() in MISSING:
                if not schema.impute_missing:
                    raise IngestError(f"row {line}, column {col!r}: missing value (enable mean imputation to fill)")
                covs.append(math.nan)
            else:
                covs.append(_number(raw, line, col))
        sid = rec[schema.id] if schema.id else str(line - 1)
        parsed.append((sid, action, time, event, covs))
    if not parsed:
        raise IngestError(f"{path}: every row was filtered out")

    if schema.covariates:
        M = np.array([p[4] for p in parsed], dtype=float)
        if np.isnan(M).any():
            observed = (~np.isnan(M)).sum(axis=0)
            if (observed == 0).any():
                bad = [c for c, k in zip(schema.covariates, observed) if k == 0]
                raise IngestError(f"{path}: columns {bad} have no observed values to impute from")
            M = np.where(np.isnan(M), np.nanmean(M, axis=0), M)
    else:
        M = np.zeros((len(parsed), 0))

    if tmap is not None:
        actions = tuple(sorted(set(tmap.values()), key=str))
    else:
        actions = tuple(sorted({p[1] for p in parsed}, key=str))
    subjects = []
    for (sid, action, time, event, _), row in zip(parsed, M):
        hist = build_history(list(zip(schema.covariates, row)), [], actions)
        subjects.append(Subject(str(sid), (StageRecord(1, hist, action, time, event, True),)))
    return TrialDataset(tuple(subjects), actions, 1)


def synthetic_two_stage_split(
    dataset: TrialDataset,
    cutoff_low: float = 120.0,
    cutoff_high: float = 180.0,
    keep_prob: float = 0.7,
    seed: int = 0,
) -> TrialDataset:
    """Split each subject's follow-up at a random cutoff into two stages.

    Subjects whose observed time ends at or before the cutoff stop after
    stage 1. The rest complete stage 1 (``Y1 = u``, event recorded) and
    carry the residual ``Y - u`` with the original event flag into stage 2,
    keeping their treatment with probability ``keep_prob``.
    """
    if dataset.num_stages != 1:
        raise ValueError("synthetic_two_stage_split needs a single-stage dataset")
    if not 0.0 <= cutoff_low <= cutoff_high:
        raise ValueError("need 0 <= cutoff_low <= cutoff_high")
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError("keep_prob must lie in [0, 1]")
    A = dataset.action_set
    rng = np.random.default_rng(seed)
    n = len(dataset)
    cutoffs = rng.uniform(cutoff_low, cutoff_high, n) if cutoff_high > cutoff_low else np.full(n, cutoff_low)
    keep = rng.random(n) < keep_prob
    switch_pick = rng.integers(0, max(len(A) - 1, 1), n)

    subjects = []
    for i, s in enumerate(dataset.subjects):
        rec = s.stage(1)
        u = float(cutoffs[i])
        a1 = rec.treatment
        if keep[i] or len(A) == 1:
            a2 = a1
        else:
            others = [a for a in A if a != a1]
            a2 = others[switch_pick[i] % len(others)]
        baseline = list(zip(rec.history.names, rec.history.values))
        h1 = build_history(baseline, [], A)
        h2 = build_history(baseline, [a1], A, stage_covariates=[[], []])
        if rec.observed_time <= u:
            s1 = StageRecord(1, h1, a1, rec.observed_time, rec.event, True)
            s2 = StageRecord(2, h2, a2, 0.0, False, False)
        else:
            s1 = StageRecord(1, h1, a1, u, True, True)
            s2 = StageRecord(2, h2, a2, rec.observed_time - u, rec.event, True)
        subjects.append(Subject(s.id, (s1, s2)))
    return TrialDataset(tuple(subjects), A, 2)


LONG_FIXED = ["id", "stage", "time", "event", "treatment", "reached"]


def write_long_csv(dataset: TrialDataset, path) -> None:
    """``id,stage,time,event,treatment,reached,<covariates...>``; a blank
    cell means the covariate is not part of that stage's history."""
    names: list[str] = []
    for s in dataset.subjects:
        for r in s.stages:
            for nm in r.history.names:
                if nm not in names:
                    names.append(nm)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_FIXED + names)
        for s in dataset.subjects:
            for r in s.stages:
                cov = dict(zip(r.history.names, r.history.values))
                w.writerow(
                    [s.id, r.stage_index, repr(float(r.observed_time)), int(r.event), r.treatment, int(r.reached)]
                    + [repr(cov[nm]) if nm in cov else "" for nm in names]
                )


def read_long_csv(path, action_set=None) -> TrialDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in LONG_FIXED if c not in header]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        cov_names = [c for c in header if c not in LONG_FIXED]
        by_id: dict[str, list] = {}
        for line, rec in enumerate(reader, start=2):
            try:
                stage = int(rec["stage"])
            except ValueError:
                raise IngestError(f"row {line}: bad stage {rec['stage']!r}") from None
            names = [c for c in cov_names if (rec[c] or "").strip() != ""]
            vals = [_number(rec[c], line, c) for c in names]
            r = StageRecord(
                stage,
                build_history(list(zip(names, vals)), [], ()),
                _action(rec["treatment"].strip()),
                _number(rec["time"], line, "time"),
                _event(rec["event"], line, "event"),
                _event(rec["reached"], line, "reached"),
            )
            by_id.setdefault(rec["id"], []).append(r)
    if not by_id:
        raise IngestError(f"{path}: no data rows")
    subjects = [Subject(sid, tuple(sorted(recs, key=lambda r: r.stage_index))) for sid, recs in by_id.items()]
    K = max(len(s.stages) for s in subjects)
    if action_set is None:
        action_set = tuple(sorted({r.treatment for s in subjects for r in s.stages}, key=str))
    return TrialDataset(tuple(subjects), tuple(action_set), K)
