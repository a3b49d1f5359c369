"""Counterfactual labels: does removing a step change the next action?

For every (current observation, past step) pair of a trajectory we
render the context twice, once intact and once with that single step
elided, sample the backbone K/2 times per condition with positionally
paired seeds, and label the step with the fraction of pairs whose
canonical next actions differ. A step whose removal never changes the
action gets y = 0; one that always changes it gets y = 1.

Oracle failures skip the pair with a logged cause. No label is ever
fabricated.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from stepprune import Trajectory, group_context, render
from stepprune.engine import CompressionPlan, elision_spans
from stepprune.parser import ParsedContext

from .canon import canonicalize
from .oracle import OracleError, PolicyOracle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelConfig:
    """Labeling and split parameters (defaults match the shipped recipe)."""

    k: int = 8
    temperature: float = 1.0
    seed: int = 0
    val_split: float = 0.2
    eval_ids: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        _check_k(self.k)
        if not 0.0 < self.val_split < 1.0:
            raise ValueError(f"val_split must be in (0, 1), got {self.val_split}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be nonnegative, got {self.temperature}")


def _check_k(k: int) -> None:
    if k < 2 or k % 2 != 0:
        raise ValueError(f"k must be an even count of at least 2, got {k}")


@dataclass(frozen=True)
class LabelRecord:
    """One labeled (anchor, past step) pair with its audit trail."""

    trajectory_id: str
    step_index: int
    anchor: str
    action: str
    obs: str
    y: float
    k: int
    with_actions: tuple[str, ...]
    without_actions: tuple[str, ...]

    def __post_init__(self) -> None:
        _check_k(self.k)
        half = self.k // 2
        if len(self.with_actions) != half or len(self.without_actions) != half:
            raise ValueError(
                f"expected {half} rollouts per condition, got "
                f"{len(self.with_actions)}/{len(self.without_actions)}"
            )
        if not 0.0 <= self.y <= 1.0 or abs(self.y * half - round(self.y * half)) > 1e-9:
            raise ValueError(f"y must be a multiple of 1/{half} in [0, 1], got {self.y}")

    def to_json(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "step_index": self.step_index,
            "anchor": self.anchor,
            "action": self.action,
            "obs": self.obs,
            "y": self.y,
            "k": self.k,
            "with_actions": list(self.with_actions),
            "without_actions": list(self.without_actions),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LabelRecord":
        try:
            return cls(
                trajectory_id=obj["trajectory_id"],
                step_index=obj["step_index"],
                anchor=obj["anchor"],
                action=obj["action"],
                obs=obj["obs"],
                y=obj["y"],
                k=obj["k"],
                with_actions=tuple(obj["with_actions"]),
                without_actions=tuple(obj["without_actions"]),
            )
        except KeyError as exc:
            raise ValueError(f"label record missing field {exc.args[0]!r}") from exc


def label_pair(
    oracle: PolicyOracle,
    full_ctx: str,
    ctx_without_step: str,
    k: int = 8,
    temperature: float = 1.0,
    seed: int = 0,
    trajectory_id: str = "",
    step_index: int = 0,
    anchor: str = "",
    action: str = "",
    obs: str = "",
) -> LabelRecord:
    """Sample K/2 positionally paired rollouts and compute the flip rate.

    Pair i uses seed ``seed + i`` for both conditions, so the with and
    without samples of a pair share their randomness and only the elided
    step differs.
    """
    _check_k(k)
    with_actions = []
    without_actions = []
    flips = 0
    for i in range(k // 2):
        pair_seed = seed + i
        kept = canonicalize(oracle.sample_next_action(full_ctx, temperature, pair_seed))
        dropped = canonicalize(oracle.sample_next_action(ctx_without_step, temperature, pair_seed))
        with_actions.append(kept)
        without_actions.append(dropped)
        flips += kept != dropped
    return LabelRecord(
        trajectory_id=trajectory_id,
        step_index=step_index,
        anchor=anchor,
        action=action,
        obs=obs,
        y=flips / (k // 2),
        k=k,
        with_actions=tuple(with_actions),
        without_actions=tuple(without_actions),
    )


def counterfactual_texts(ctx: ParsedContext) -> list[tuple[int, str, str]]:
    """(step ordinal, intact rendering, rendering with that step elided)."""
    n = ctx.n_steps
    out = []
    full = render(ctx, _keep_plan(n, set(range(1, n + 1)))).rendered
    for i in range(1, n + 1):
        kept = set(range(1, n + 1)) - {i}
        without = render(ctx, _keep_plan(n, kept)).rendered
        out.append((i, full, without))
    return out


def _keep_plan(n_steps: int, kept: set[int]) -> CompressionPlan:
    return CompressionPlan(
        floor_indices=frozenset(),
        kept_indices=tuple(sorted(kept)),
        scores=(),
        budget_b=0,
        budget_used=0,
        elision_spans=elision_spans(n_steps, kept),
    )


def record_seed(base_seed: int, trajectory_id: str, step_index: int) -> int:
    """Stable per-pair seed so labeling is order independent."""
    material = f"{base_seed}|{trajectory_id}|{step_index}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


def split_trajectory_ids(
    ids: Sequence[str], val_split: float, seed: int
) -> tuple[frozenset[str], frozenset[str]]:
    """Assign whole trajectories to train or val; no id ever spans both."""
    unique = list(dict.fromkeys(ids))
    rng = random.Random(seed)
    rng.shuffle(unique)
    n_val = round(val_split * len(unique))
    val = frozenset(unique[:n_val])
    train = frozenset(unique[n_val:])
    assert not train & val, "split produced an id on both sides"
    return train, val


@dataclass(frozen=True)
class LabeledDataset:
    """All labeled records plus the trajectory-level partition."""

    records: tuple[LabelRecord, ...]
    train_ids: frozenset[str]
    val_ids: frozenset[str]

    def __post_init__(self) -> None:
        overlap = self.train_ids & self.val_ids
        assert not overlap, f"trajectories on both sides of the split: {sorted(overlap)}"
        missing = {r.trajectory_id for r in self.records} - (self.train_ids | self.val_ids)
        assert not missing, f"records outside the split: {sorted(missing)}"

    @property
    def train_records(self) -> tuple[LabelRecord, ...]:
        return tuple(r for r in self.records if r.trajectory_id in self.train_ids)

    @property
    def val_records(self) -> tuple[LabelRecord, ...]:
        return tuple(r for r in self.records if r.trajectory_id in self.val_ids)


def build_dataset(
    trajectories: Sequence[Trajectory],
    oracle: PolicyOracle,
    cfg: LabelConfig = LabelConfig(),
) -> LabeledDataset:
    """Label every (anchor, past step) pair and split by trajectory.

    Trajectories that collide with ``cfg.eval_ids`` are a hard failure:
    training data must never overlap the evaluation tasks. Pairs whose
    oracle calls fail are skipped and logged, never imputed.
    """
    records: list[LabelRecord] = []
    for traj in trajectories:
        if traj.task_id in cfg.eval_ids:
            raise ValueError(
                f"trajectory {traj.task_id!r} is an evaluation task; "
                "refusing to label training pairs from it"
            )
        ctx = group_context(traj.blocks)
        if ctx.n_steps == 0:
            continue
        anchor = ctx.c_now.text
        steps = {s.index: s for s in ctx.past_steps}
        for index, full, without in counterfactual_texts(ctx):
            step = steps[index]
            try:
                records.append(
                    label_pair(
                        oracle,
                        full,
                        without,
                        k=cfg.k,
                        temperature=cfg.temperature,
                        seed=record_seed(cfg.seed, traj.task_id, index),
                        trajectory_id=traj.task_id,
                        step_index=index,
                        anchor=anchor,
                        action=step.atom.action_norm,
                        obs=step.atom.obs_norm,
                    )
                )
            except OracleError as exc:
                log.warning(
                    "skipping %s step %d: oracle failed (%s)", traj.task_id, index, exc
                )
    labeled_ids = list(dict.fromkeys(r.trajectory_id for r in records))
    train_ids, val_ids = split_trajectory_ids(labeled_ids, cfg.val_split, cfg.seed)
    return LabeledDataset(records=tuple(records), train_ids=train_ids, val_ids=val_ids)


def write_records(path: str | Path, records: Iterable[LabelRecord]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")


def read_records(path: str | Path) -> tuple[LabelRecord, ...]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {line_no}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ValueError(f"line {line_no}: record is not a JSON object")
            records.append(LabelRecord.from_json(obj))
    return tuple(records)
