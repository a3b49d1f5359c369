"""Command-line surface.

Subcommands: compress, replay, score, audit, metrics, jaccard, simulate.
stdout carries data only; all diagnostics go to stderr. Exit codes:
0 clean, 1 usage or I/O failure, 2 audit findings.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Iterator, Optional

from .accounting import CellMetrics, cell_metrics, mean_jaccard
from .atoms import AtomRuleSet, DEFAULT_RULES, load_rules
from .audit import NOCOMP_NAME, audit
from .config import load_prices, load_run_config
from .engine import (
    BASELINE_NAMES,
    BaselineMethod,
    CompressionConfig,
    CompressionPlan,
    FloorK,
    LEARNED_METHOD,
    ObsMask,
    TruncateN,
    baseline_compress,
    compress,
)
from .errors import JsonLineError, PairingError, StepPruneError
from .jsonl import EVAL_LOG, RAW_PROMPT, SCHEMAS, dump_record, record_to_trajectory, read_trajectories
from .parser import group_context
from .scoring import Scorer, resolve_scorer, score_steps
from .simulate import CriticalKeywordScorer, DEFAULT_BACKBONE, DEFAULT_ENV, simulate_cell
from .trajectory import Role, TaskLogRecord, Trajectory

log = logging.getLogger("stepprune")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2

METHOD_CHOICES = (LEARNED_METHOD, *BASELINE_NAMES)


class _ArgumentParser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit 1, not 2.

    Exit code 2 is reserved for audit findings.
    """

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


@contextmanager
def _open_in(path: str):
    if path == "-":
        yield sys.stdin
    else:
        with open(path, "r", encoding="utf-8") as fh:
            yield fh


@contextmanager
def _open_out(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def _write_jsonl(path: Optional[str], records: list[dict]) -> None:
    with _open_out(path) as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False))
            fh.write("\n")


def _iter_input(path: str, schema: str, errors: list[str]) -> Iterator[tuple[int, Trajectory]]:
    """Yield parseable records, collecting per-line failures instead of dying."""
    with _open_in(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(f"line {lineno}: invalid JSON: {exc.msg}")
                continue
            if not isinstance(record, dict):
                errors.append(f"line {lineno}: record is not a JSON object")
                continue
            try:
                yield lineno, record_to_trajectory(record, schema, lineno)
            except (JsonLineError, ValueError) as exc:
                errors.append(str(exc))


@dataclass
class RunSettings:
    cfg: CompressionConfig
    method_name: str
    baseline: Optional[BaselineMethod]
    scorer: Scorer
    rules: AtomRuleSet


def _settings(args: argparse.Namespace) -> RunSettings:
    """Merge defaults, config file, and flags (flags win)."""
    file_cfg = load_run_config(args.config) if getattr(args, "config", None) else {}

    def pick(name: str, default):
        value = getattr(args, name, None)
        if value is not None:
            return value
        return file_cfg.get(name, default)

    cfg = CompressionConfig(
        rho=pick("rho", 0.25),
        k_recent=pick("k_recent", 2),
        theta_hi=pick("theta_hi", 0.9),
        seed=pick("seed", 0),
    )
    method_name = pick("method", LEARNED_METHOD)
    baseline: Optional[BaselineMethod] = None
    if method_name != LEARNED_METHOD:
        cls = BASELINE_NAMES.get(method_name)
        if cls is None:
            raise ValueError(
                f"unknown method {method_name!r}; known: {', '.join(METHOD_CHOICES)}"
            )
        if cls in (FloorK, ObsMask):
            baseline = cls(k=getattr(args, "k", 2))
        elif cls is TruncateN:
            baseline = cls(n_tokens=getattr(args, "n_tokens", 2048))
        else:
            baseline = cls()
    scorer_spec = pick("scorer", "lexical")
    scorer = CriticalKeywordScorer() if scorer_spec == "critical" else resolve_scorer(scorer_spec)
    rules_path = pick("rules", None)
    rules = load_rules(rules_path) if rules_path else DEFAULT_RULES
    return RunSettings(
        cfg=cfg, method_name=method_name, baseline=baseline, scorer=scorer, rules=rules
    )


def _compress_ctx(ctx, settings: RunSettings, task_id: str):
    if settings.baseline is None:
        return compress(ctx, settings.scorer, settings.cfg)
    return baseline_compress(ctx, settings.baseline, settings.cfg, task_id=task_id)


def _plan_obj(plan: CompressionPlan) -> dict[str, Any]:
    return {
        "floor": sorted(plan.floor_indices),
        "kept": list(plan.kept_indices),
        "budget_b": plan.budget_b,
        "budget_used": plan.budget_used,
        "elision_spans": [list(span) for span in plan.elision_spans],
        "scores": [{"index": s.index, "p": s.p} for s in plan.scores],
    }


def _report_errors(errors: list[str]) -> int:
    for message in errors:
        log.error("%s", message)
    return EXIT_ERROR if errors else EXIT_OK


# --- subcommands -----------------------------------------------------------


def cmd_compress(args: argparse.Namespace) -> int:
    settings = _settings(args)
    errors: list[str] = []
    out_records = []
    plan_records = []
    for lineno, traj in _iter_input(args.input, args.schema, errors):
        try:
            ctx = group_context(traj.blocks, settings.rules)
            result = _compress_ctx(ctx, settings, traj.task_id)
        except StepPruneError as exc:
            errors.append(f"line {lineno} (task {traj.task_id!r}): {exc}")
            continue
        out_records.append(
            {
                "task_id": traj.task_id,
                "method": settings.method_name,
                "rendered": result.rendered,
                "realized_ratio": result.realized_ratio,
            }
        )
        plan_records.append({"task_id": traj.task_id, **_plan_obj(result.plan)})
    _write_jsonl(args.out, out_records)
    if args.plans:
        _write_jsonl(args.plans, plan_records)
    return _report_errors(errors)


def cmd_replay(args: argparse.Namespace) -> int:
    settings = _settings(args)
    errors: list[str] = []
    rows = []
    for lineno, traj in _iter_input(args.input, EVAL_LOG, errors):
        try:
            rows.extend(_replay_one(traj, settings))
        except StepPruneError as exc:
            errors.append(f"line {lineno} (task {traj.task_id!r}): {exc}")
    _write_jsonl(args.out, rows)
    return _report_errors(errors)


def _replay_one(traj: Trajectory, settings: RunSettings) -> list[dict]:
    """Compress every call prefix of a trajectory (each prefix ends on a user block)."""
    rows = []
    prefix: list = []
    for block in traj.blocks:
        prefix.append(block)
        if block.role is not Role.USER:
            continue
        ctx = group_context(tuple(prefix), settings.rules)
        result = _compress_ctx(ctx, settings, traj.task_id)
        rows.append(
            {
                "task_id": traj.task_id,
                "step": ctx.n_steps,
                "method": settings.method_name,
                "kept": list(result.plan.kept_indices),
                "floor": sorted(result.plan.floor_indices),
                "realized_ratio": result.realized_ratio,
            }
        )
    return rows


def cmd_score(args: argparse.Namespace) -> int:
    settings = _settings(args)
    errors: list[str] = []
    rows = []
    for lineno, traj in _iter_input(args.input, args.schema, errors):
        try:
            ctx = group_context(traj.blocks, settings.rules)
            scores = score_steps(ctx, settings.scorer)
        except StepPruneError as exc:
            errors.append(f"line {lineno} (task {traj.task_id!r}): {exc}")
            continue
        rows.append(
            {
                "task_id": traj.task_id,
                "scores": [{"index": s.index, "p": s.p} for s in scores],
            }
        )
    _write_jsonl(args.out, rows)
    return _report_errors(errors)


def _load_cells(path: str) -> dict[tuple[str, str, str], list[TaskLogRecord]]:
    """Group an eval log into (env, backbone, method) cells, insertion-ordered."""
    cells: dict[tuple[str, str, str], list[TaskLogRecord]] = {}
    for traj in read_trajectories(path, EVAL_LOG):
        record = TaskLogRecord.from_trajectory(traj)
        key = (record.env, record.backbone, record.method_name)
        cells.setdefault(key, []).append(record)
    return cells


def cmd_audit(args: argparse.Namespace) -> int:
    cells = _load_cells(args.input)
    train_ids: set[str] = set()
    if args.train_ids:
        with _open_in(args.train_ids) as fh:
            train_ids = {line.strip() for line in fh if line.strip()}
    report = audit(
        list(cells.values()),
        train_ids=train_ids,
        nominal_ratio=args.nominal_ratio,
    )
    with _open_out(args.out) as fh:
        json.dump(report.to_json(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    if report.has_findings:
        log.warning("audit found violations")
        return EXIT_FINDINGS
    return EXIT_OK


def _clean_float(value: float):
    return None if math.isnan(value) else value


def cmd_metrics(args: argparse.Namespace) -> int:
    cells = _load_cells(args.input)
    prices = load_prices(args.prices)
    references = {
        key[:2]: cell for key, cell in cells.items() if key[2] == NOCOMP_NAME
    }
    rows: list[CellMetrics] = []
    for key, cell in cells.items():
        reference = references.get(key[:2])
        if reference is None:
            raise PairingError(
                f"no uncompressed ({NOCOMP_NAME}) reference cell for {key[0]}/{key[1]}"
            )
        rows.append(
            cell_metrics(
                cell,
                reference,
                prices,
                resamples=args.resamples,
                level=args.level,
                seed=args.seed,
            )
        )
    _emit_metrics(rows, args.format, args.out)
    return EXIT_OK


_METRIC_FIELDS = (
    "env", "backbone", "method_name", "n_tasks", "mr",
    "retention", "eff_ratio", "cost_per_task", "ci_low", "ci_high",
)


def _emit_metrics(rows: list[CellMetrics], fmt: str, out: Optional[str]) -> None:
    with _open_out(out) as fh:
        if fmt == "json":
            payload = [
                {
                    field: (
                        _clean_float(getattr(row, field))
                        if isinstance(getattr(row, field), float)
                        else getattr(row, field)
                    )
                    for field in _METRIC_FIELDS
                }
                for row in rows
            ]
            json.dump(payload, fh, ensure_ascii=False, indent=2)
            fh.write("\n")
        else:
            writer = csv.writer(fh)
            writer.writerow(_METRIC_FIELDS)
            for row in rows:
                writer.writerow(
                    [
                        "" if isinstance(v, float) and math.isnan(v) else v
                        for v in (getattr(row, field) for field in _METRIC_FIELDS)
                    ]
                )


def _read_replay(path: str) -> dict[tuple[str, int], set[int]]:
    calls: dict[tuple[str, int], set[int]] = {}
    with _open_in(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JsonLineError(f"invalid JSON: {exc.msg}", lineno) from exc
            if (
                not isinstance(record, dict)
                or not isinstance(record.get("task_id"), str)
                or not isinstance(record.get("step"), int)
                or not isinstance(record.get("kept"), list)
            ):
                raise JsonLineError(
                    "replay record needs task_id (string), step (int), kept (list)", lineno
                )
            key = (record["task_id"], record["step"])
            if key in calls:
                raise PairingError(f"{path}: duplicate call {key!r}")
            calls[key] = {int(i) for i in record["kept"]}
    return calls


def cmd_jaccard(args: argparse.Namespace) -> int:
    calls_a = _read_replay(args.log_a)
    calls_b = _read_replay(args.log_b)
    only_a = sorted(set(calls_a) - set(calls_b))
    only_b = sorted(set(calls_b) - set(calls_a))
    if only_a:
        raise PairingError(f"call {only_a[0]!r} missing from {args.log_b}")
    if only_b:
        raise PairingError(f"call {only_b[0]!r} missing from {args.log_a}")
    pairs = [(calls_a[key], calls_b[key]) for key in sorted(calls_a)]
    result = {"n_calls": len(pairs), "mean_jaccard": mean_jaccard(pairs)}
    with _open_out(args.out) as fh:
        json.dump(result, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    settings = _settings(args)
    trajectories = simulate_cell(
        args.n_tasks,
        method=settings.baseline if settings.baseline is not None else LEARNED_METHOD,
        scorer=settings.scorer,
        cfg=settings.cfg,
        seed=settings.cfg.seed,
        env=args.env,
        backbone=args.backbone,
    )
    with _open_out(args.out) as fh:
        for traj in trajectories:
            fh.write(dump_record(traj, EVAL_LOG))
            fh.write("\n")
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def _add_compression_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML/JSON config file with defaults for these flags")
    p.add_argument("--rho", type=float, help="target keep ratio in (0, 1]")
    p.add_argument("--k-recent", type=int, dest="k_recent", help="recency floor size")
    p.add_argument("--theta-hi", type=float, dest="theta_hi", help="score override threshold")
    p.add_argument("--seed", type=int, help="seed for randomized selection")
    p.add_argument("--method", choices=METHOD_CHOICES, help="compression method")
    p.add_argument("--scorer", help="lexical, critical, or portable:<dir>")
    p.add_argument("--rules", help="atom rule-set JSON file")
    p.add_argument("--k", type=int, default=2, help="window size for floork/obsmask")
    p.add_argument(
        "--n-tokens", type=int, default=2048, dest="n_tokens",
        help="token budget for the truncate method",
    )


def _add_out_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", "-o", default="-", help="output path ('-' for stdout)")


def build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(
        prog="stepprune",
        description="Step-level compression of agent trajectory prompts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress prompts from a JSONL file")
    p.add_argument("input", help="input JSONL ('-' for stdin)")
    p.add_argument(
        "--schema", choices=SCHEMAS, default=RAW_PROMPT,
        help="input record schema (default raw_prompt)",
    )
    p.add_argument("--plans", help="optional sidecar JSONL with per-task plans")
    _add_out_flag(p)
    _add_compression_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("replay", help="compress every call prefix of logged trajectories")
    p.add_argument("input", help="eval-log JSONL")
    _add_out_flag(p)
    _add_compression_flags(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("score", help="score past steps against the current observation")
    p.add_argument("input", help="input JSONL")
    p.add_argument("--schema", choices=SCHEMAS, default=EVAL_LOG)
    _add_out_flag(p)
    _add_compression_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("audit", help="run data-integrity audits over an eval log")
    p.add_argument("input", help="eval-log JSONL")
    p.add_argument("--train-ids", help="file with one training task id per line")
    p.add_argument(
        "--nominal-ratio", type=float, default=4.0,
        help="nominal compression target for drift checking",
    )
    _add_out_flag(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("metrics", help="per-cell metrics against the uncompressed cells")
    p.add_argument("input", help="eval-log JSONL")
    p.add_argument("--prices", help="price table file (TOML/JSON)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    _add_out_flag(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("jaccard", help="mean kept-step overlap between two replay logs")
    p.add_argument("log_a", help="replay JSONL for method A")
    p.add_argument("log_b", help="replay JSONL for method B")
    _add_out_flag(p)
    p.set_defaults(func=cmd_jaccard)

    p = sub.add_parser("simulate", help="run a method over the synthetic planted-code env")
    p.add_argument("--n-tasks", type=int, default=30, dest="n_tasks")
    p.add_argument("--env", default=DEFAULT_ENV, help="environment label for the log")
    p.add_argument("--backbone", default=DEFAULT_BACKBONE, help="backbone label for the log")
    _add_out_flag(p)
    _add_compression_flags(p)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return EXIT_ERROR
    except (StepPruneError, OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
