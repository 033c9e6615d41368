"""Command-line front end: simulate, fit, evaluate, split-stages, report."""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys
from pathlib import Path

from .ingest import CsvSchema, read_long_csv, read_trial_csv, synthetic_two_stage_split, write_long_csv
from .q_learning import Method, Mode, Policy, argmax_rows, backward_induction, default_config, q_table
from .simulation import ReplicationResults, format_summary, run_replications, summarize, write_summary_csv

log = logging.getLogger("bjqlearn")

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _methods(text: str) -> list[Method]:
    out = []
    for name in text.split(","):
        if not name.strip():
            continue
        try:
            out.append(Method.parse(name))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if not out:
        raise UsageError("no methods given")
    return out


def _jobs(value) -> int:
    if value is None:
        value = os.environ.get("BJQ_JOBS") or os.cpu_count() or 1
    try:
        jobs = int(value)
    except ValueError:
        raise UsageError(f"--jobs must be an integer, got {value!r}") from None
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    return jobs


def _boost_overrides(args) -> dict:
    out = {}
    for key in ("iterations", "learning_rate", "max_depth", "min_leaf"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


@contextlib.contextmanager
def _outputs(*paths):
    """Remove partially written outputs if the body raises."""
    try:
        yield
    except BaseException:
        for p in paths:
            if p is not None:
                with contextlib.suppress(FileNotFoundError):
                    Path(p).unlink()
        raise


def _sibling(path: str, suffix: str) -> str:
    p = Path(path)
    return str(p.with_name(p.stem + suffix + (p.suffix or ".csv")))


def cmd_simulate(args) -> int:
    methods = _methods(args.methods)
    jobs = _jobs(args.jobs)
    summary_path = args.summary or _sibling(args.out, "_summary")
    dump_path = _sibling(args.out, "_qdump") if args.dump_q else None
    with _outputs(args.out, summary_path, dump_path):
        results = run_replications(
            methods, args.n, args.stages, args.reps, args.seed,
            mode=Mode.BACKWARD if args.backward else Mode.ADDITIVE,
            literal_censoring=args.literal_censoring,
            boost_overrides=_boost_overrides(args),
            dump_q=args.dump_q,
            jobs=jobs,
        )
        results.write_csv(args.out)
        summary = summarize(results)
        write_summary_csv(summary, summary_path)
        if dump_path:
            results.write_qdump(dump_path)
    for r in results.failures:
        print(f"warning: rep {r.rep} {r.method} failed: {r.error}", file=sys.stderr)
    print(format_summary(summary))
    return EXIT_OK


def _schema(args) -> CsvSchema:
    covs = tuple(c.strip() for c in (args.covariates or "").split(",") if c.strip())
    tmap = None
    if args.arm_map:
        tmap = {}
        for pair in args.arm_map.split(","):
            if "=" not in pair:
                raise UsageError(f"--arm-map entries look like CODE=ACTION, got {pair!r}")
            code, action = pair.split("=", 1)
            action = action.strip()
            tmap[code.strip()] = int(action) if action.lstrip("-").isdigit() else action
    drop = frozenset(c.strip() for c in (args.drop_arms or "").split(",") if c.strip())
    return CsvSchema(args.time, args.event, args.treatment, covs, args.id, tmap, drop, args.impute_missing)


def _load(args):
    if args.format == "long":
        return read_long_csv(args.data)
    return read_trial_csv(args.data, _schema(args))


def _tuning_grid(args, method: Method):
    base = default_config(method)
    if base is None or not args.tune:
        return None
    from dataclasses import replace

    base = replace(base, **_boost_overrides(args))
    return [
        replace(base, iterations=m, learning_rate=nu)
        for m in (int(x) for x in args.grid_iterations.split(","))
        for nu in (float(x) for x in args.grid_learning_rates.split(","))
    ]


def cmd_fit(args) -> int:
    try:
        method = Method.parse(args.method)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset = _load(args)
    config = _tuning_grid(args, method)
    if config is None and default_config(method) is not None:
        from dataclasses import replace

        config = replace(default_config(method), **_boost_overrides(args))
    with _outputs(args.out):
        policy = backward_induction(dataset, method, config, Mode(args.mode), args.cv_folds, args.seed)
        Path(args.out).write_text(policy.to_json() + "\n")
    print(f"wrote {args.out} ({method.cli_name}, {dataset.num_stages} stage(s), {len(dataset)} subjects)")
    return EXIT_OK


def _label(seq) -> str:
    return "".join(str(a) for a in seq)


def decisions_rows(policy: Policy, dataset) -> tuple[list, list]:
    seqs, table = q_table(policy, dataset)
    best = argmax_rows(seqs, table)
    header = ["id"] + [f"q_{_label(s)}" for s in seqs] + ["decision"]
    rows = [
        [s.id] + [repr(float(v)) for v in table[i]] + [_label(best[i])]
        for i, s in enumerate(dataset.subjects)
    ]
    return header, rows


def cmd_evaluate(args) -> int:
    policy = Policy.from_json(Path(args.policy).read_text())
    dataset = _load(args)
    header, rows = decisions_rows(policy, dataset)
    with _outputs(args.out):
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    print(f"wrote {len(rows)} decisions to {args.out}")
    return EXIT_OK


def cmd_split_stages(args) -> int:
    dataset = read_trial_csv(args.data, _schema(args))
    split = synthetic_two_stage_split(dataset, args.cutoff_low, args.cutoff_high, args.keep_prob, args.seed)
    with _outputs(args.out):
        write_long_csv(split, args.out)
    reached = sum(s.stage(2).reached for s in split.subjects)
    print(f"wrote {args.out}: {len(split)} subjects, {reached} reach stage 2")
    return EXIT_OK


def cmd_report(args) -> int:
    results = ReplicationResults.read_csv(args.results)
    summary = summarize(results)
    with _outputs(args.out):
        write_summary_csv(summary, args.out)
    print(format_summary(summary))
    return EXIT_OK


def _add_schema_flags(p):
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--format", choices=("wide", "long"), default="wide",
                   help="wide: one row per subject (needs schema flags); long: id,stage,... export")
    p.add_argument("--time", default="days", help="time column (default: days)")
    p.add_argument("--event", default="cens", help="event indicator column, 1 = event (default: cens)")
    p.add_argument("--treatment", default="arms", help="treatment column (default: arms)")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--id", default=None, help="subject id column")
    p.add_argument("--arm-map", default=None, help="recode arms, e.g. 3=0,1=1")
    p.add_argument("--drop-arms", default=None, help="arm codes to filter out, e.g. 0,2")
    p.add_argument("--impute-missing", action="store_true", help="mean-impute missing covariates")


def _add_boost_flags(p):
    p.add_argument("--iterations", type=int, default=None, help="boosting iterations M (default 500)")
    p.add_argument("--learning-rate", type=float, default=None, help="learning rate nu (default 0.1)")
    p.add_argument("--max-depth", type=int, default=None, help="tree depth (default 2)")
    p.add_argument("--min-leaf", type=int, default=None, help="minimum leaf size (default 5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bjq", description="Buckley-James boosting Q-learning for censored trials")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replicate the simulation study")
    p.add_argument("--stages", type=int, choices=(1, 2), default=1)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--methods", default="bj,bj-ls,bj-tree,cox", help="comma list from {bj, bj-ls, bj-tree, cox}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="raw results CSV")
    p.add_argument("--summary", default=None, help="summary CSV (default: <out>_summary.csv)")
    p.add_argument("--literal-censoring", action="store_true", help="two-stage: compare each stage time with C")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--additive", action="store_true", help="sum per-stage Q-values (default)")
    g.add_argument("--backward", action="store_true", help="pseudo-outcome backward induction")
    p.add_argument("--dump-q", action="store_true", help="also write <out>_qdump.csv of true vs estimated Q")
    p.add_argument("--jobs", default=None, help="worker processes (default: $BJQ_JOBS or CPU count)")
    _add_boost_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a policy and write it as JSON")
    _add_schema_flags(p)
    p.add_argument("--method", default="bj-tree")
    p.add_argument("--mode", choices=("additive", "backward"), default="backward")
    p.add_argument("--tune", action="store_true", help="cross-validate M and nu per arm")
    p.add_argument("--grid-iterations", default="50,100,250,500")
    p.add_argument("--grid-learning-rates", default="0.1")
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="policy JSON")
    _add_boost_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="per-subject Q-values and decisions")
    _add_schema_flags(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("split-stages", help="split one-stage data into two stages at a random cutoff")
    _add_schema_flags(p)
    p.add_argument("--cutoff-low", type=float, default=120.0)
    p.add_argument("--cutoff-high", type=float, default=180.0)
    p.add_argument("--keep-prob", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="long-format CSV")
    p.set_defaults(func=cmd_split_stages)

    p = sub.add_parser("report", help="summarise a raw results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
