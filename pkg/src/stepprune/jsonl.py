"""JSONL input and output for trajectories.

Two record schemas are supported:

``eval_log``   one task per line with role-typed blocks, rewards, and
               per-call token counts.
``raw_prompt`` one task per line holding the flat prompt string; blocks
               are recovered by marker segmentation.

Unknown record keys are preserved in ``Trajectory.extras`` and written
back out, so foreign fields survive a read/write round trip.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import JsonLineError, SchemaError
from .parser import reassemble, segment_blocks
from .trajectory import Role, RoleBlock, Trajectory

EVAL_LOG = "eval_log"
RAW_PROMPT = "raw_prompt"
SCHEMAS = (EVAL_LOG, RAW_PROMPT)

_EVAL_KEYS = {
    "task_id",
    "env",
    "backbone",
    "blocks",
    "step_rewards",
    "final_reward",
    "token_in",
    "token_out",
}
_RAW_KEYS = {"task_id", "prompt"}

_ROLES = {r.value: r for r in Role}


def read_trajectories(path: str | Path, schema: str = EVAL_LOG) -> list[Trajectory]:
    with open(path, "r", encoding="utf-8") as fh:
        return list(parse_lines(fh, schema))


def write_trajectories(
    path: str | Path, trajectories: Iterable[Trajectory], schema: str = EVAL_LOG
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(dump_record(traj, schema))
            fh.write("\n")


def parse_lines(lines: Iterable[str], schema: str = EVAL_LOG) -> Iterator[Trajectory]:
    """Parse JSONL lines into trajectories. Blank lines are skipped.

    Raises ``JsonLineError`` for unparseable lines and ``SchemaError`` for
    records missing or misusing a required field; both carry the 1-based
    line number.
    """
    _check_schema(schema)
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise JsonLineError(f"invalid JSON: {exc.msg}", lineno) from exc
        if not isinstance(record, dict):
            raise JsonLineError("record is not a JSON object", lineno)
        yield record_to_trajectory(record, schema, lineno)


def record_to_trajectory(record: dict, schema: str = EVAL_LOG, lineno: int = 0) -> Trajectory:
    _check_schema(schema)
    task_id = _require_str(record, "task_id", lineno)
    if schema == RAW_PROMPT:
        prompt = _require_str(record, "prompt", lineno)
        extras = {k: v for k, v in record.items() if k not in _RAW_KEYS}
        return Trajectory(task_id=task_id, blocks=segment_blocks(prompt), extras=extras)

    blocks = _parse_blocks(record, lineno)
    step_rewards = _opt_floats(record, "step_rewards", lineno)
    final_reward = _opt_float(record, "final_reward", lineno)
    if step_rewards is not None and final_reward is None:
        raise SchemaError(
            "'final_reward' is required when 'step_rewards' is present",
            lineno,
            "final_reward",
        )
    return Trajectory(
        task_id=task_id,
        blocks=blocks,
        env=_opt_str(record, "env", lineno),
        backbone=_opt_str(record, "backbone", lineno),
        step_rewards=step_rewards,
        final_reward=final_reward,
        token_in=_opt_token_counts(record, "token_in", lineno),
        token_out=_opt_token_counts(record, "token_out", lineno),
        extras={k: v for k, v in record.items() if k not in _EVAL_KEYS},
    )


def trajectory_to_record(traj: Trajectory, schema: str = EVAL_LOG) -> dict[str, Any]:
    _check_schema(schema)
    if schema == RAW_PROMPT:
        return {"task_id": traj.task_id, "prompt": reassemble(traj.blocks), **traj.extras}
    record: dict[str, Any] = {
        "task_id": traj.task_id,
        "env": traj.env,
        "backbone": traj.backbone,
        "blocks": [_block_to_obj(b) for b in traj.blocks],
    }
    if traj.step_rewards is not None:
        record["step_rewards"] = list(traj.step_rewards)
    if traj.final_reward is not None:
        record["final_reward"] = traj.final_reward
    if traj.token_in is not None:
        record["token_in"] = list(traj.token_in)
    if traj.token_out is not None:
        record["token_out"] = list(traj.token_out)
    record.update(traj.extras)
    return record


def dump_record(traj: Trajectory, schema: str = EVAL_LOG) -> str:
    return json.dumps(trajectory_to_record(traj, schema), ensure_ascii=False)


def _block_to_obj(block: RoleBlock) -> dict[str, Any]:
    obj: dict[str, Any] = {"role": block.role.value, "text": block.text}
    if not block.explicit:
        obj["implicit"] = True
    return obj


def _parse_blocks(record: dict, lineno: int) -> tuple[RoleBlock, ...]:
    raw = record.get("blocks")
    if not isinstance(raw, list) or not raw:
        raise SchemaError("'blocks' must be a non-empty array", lineno, "blocks")
    blocks = []
    for i, obj in enumerate(raw):
        where = f"blocks[{i}]"
        if not isinstance(obj, dict):
            raise SchemaError(f"'{where}' must be an object", lineno, where)
        role = obj.get("role")
        if role not in _ROLES:
            raise SchemaError(
                f"'{where}.role' must be one of {sorted(_ROLES)}, got {role!r}",
                lineno,
                f"{where}.role",
            )
        text = obj.get("text")
        if not isinstance(text, str):
            raise SchemaError(f"'{where}.text' must be a string", lineno, f"{where}.text")
        implicit = obj.get("implicit", False)
        if not isinstance(implicit, bool):
            raise SchemaError(f"'{where}.implicit' must be a boolean", lineno, f"{where}.implicit")
        blocks.append(RoleBlock(_ROLES[role], text, explicit=not implicit))
    return tuple(blocks)


def _check_schema(schema: str) -> None:
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")


def _require_str(record: dict, key: str, lineno: int) -> str:
    value = record.get(key)
    if value is None:
        raise SchemaError(f"missing required field '{key}'", lineno, key)
    if not isinstance(value, str):
        raise SchemaError(f"'{key}' must be a string", lineno, key)
    return value


def _opt_str(record: dict, key: str, lineno: int) -> str:
    value = record.get(key, "")
    if not isinstance(value, str):
        raise SchemaError(f"'{key}' must be a string", lineno, key)
    return value


def _opt_float(record: dict, key: str, lineno: int):
    value = record.get(key)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"'{key}' must be a number", lineno, key)
    return float(value)


def _opt_floats(record: dict, key: str, lineno: int):
    value = record.get(key)
    if value is None:
        return None
    if not isinstance(value, list):
        raise SchemaError(f"'{key}' must be an array of numbers", lineno, key)
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"'{key}' must be an array of numbers", lineno, key)
        out.append(float(v))
    return tuple(out)


def _opt_token_counts(record: dict, key: str, lineno: int):
    value = record.get(key)
    if value is None:
        return None
    if not isinstance(value, list):
        raise SchemaError(f"'{key}' must be an array of nonnegative integers", lineno, key)
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise SchemaError(f"'{key}' must be an array of nonnegative integers", lineno, key)
        out.append(v)
    return tuple(out)
