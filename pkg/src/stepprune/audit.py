"""Data-integrity audits over evaluation logs.

Four checks: train/eval task-id disjointness, trajectory-hash uniqueness
within small arrival-order chunks, realized-vs-nominal compression drift,
and behavioral pathologies (action loops, truncated responses). Audits
are pure reports: findings are flagged alongside their cell, never
filtered out of the input.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence, Set

from .accounting import eff_ratio
from .errors import PairingError
from .trajectory import TaskLogRecord

NOCOMP_NAME = "nocomp"

DEFAULT_CHUNK_SIZE = 5
DEFAULT_LOOP_THRESHOLD = 5
DEFAULT_DRIFT_BAND = (0.5, 2.0)

# Characters that end a visibly unfinished response.
DANGLING_CHARS = ",;:-([{"

_OPEN_TO_CLOSE = {"(": ")", "[": "]", "{": "}"}


def trajectory_hash(record: TaskLogRecord) -> str:
    """Stable digest of a trajectory's content.

    Hashes a canonical JSON serialization (sorted keys, UTF-8, no
    whitespace) of the system prompt, observations, actions, and rewards,
    so equal content always collides and metadata like task_id never
    does.
    """
    material = {
        "system": record.system_prompt,
        "observations": list(record.observations),
        "actions": list(record.actions),
        "step_rewards": list(record.step_rewards) if record.step_rewards is not None else None,
        "final_reward": record.final_reward,
    }
    canonical = json.dumps(material, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def detect_cutoff(text: str, dangling: str = DANGLING_CHARS) -> bool:
    """Heuristic: does a response look truncated mid-token?

    True when any bracket type has more opens than closes, or the text
    ends in a dangling separator character. This cannot catch a cut
    inside a bare word; the limitation is inherent to a text-only check.
    """
    stripped = text.rstrip()
    if not stripped:
        return False
    for open_ch, close_ch in _OPEN_TO_CLOSE.items():
        if text.count(open_ch) > text.count(close_ch):
            return True
    return stripped[-1] in dangling


def longest_action_run(actions: Sequence[str]) -> tuple[int, str]:
    """Length and value of the longest run of identical consecutive actions."""
    best_len, best_action = 0, ""
    run_len = 0
    prev = None
    for action in actions:
        run_len = run_len + 1 if action == prev else 1
        prev = action
        if run_len > best_len:
            best_len, best_action = run_len, action
    return best_len, best_action


@dataclass(frozen=True)
class DuplicateHash:
    cell: str
    chunk_index: int
    task_ids: tuple[str, ...]
    digest: str


@dataclass(frozen=True)
class RatioDrift:
    cell: str
    realized: float
    nominal: float
    flagged: bool


@dataclass(frozen=True)
class LoopFinding:
    task_id: str
    run_length: int
    action: str


@dataclass(frozen=True)
class AuditReport:
    shared_task_ids: tuple[str, ...]
    duplicate_hashes: tuple[DuplicateHash, ...]
    ratio_drift: tuple[RatioDrift, ...]
    loops: tuple[LoopFinding, ...]
    cutoff_task_ids: tuple[str, ...]
    cutoff_rate: float

    @property
    def disjointness_ok(self) -> bool:
        return not self.shared_task_ids

    @property
    def has_findings(self) -> bool:
        return bool(
            self.shared_task_ids
            or self.duplicate_hashes
            or any(d.flagged for d in self.ratio_drift)
            or self.loops
            or self.cutoff_rate > 0
        )

    def to_json(self) -> dict:
        return {
            "disjointness": {
                "ok": self.disjointness_ok,
                "shared_task_ids": list(self.shared_task_ids),
            },
            "duplicate_hashes": [
                {
                    "cell": d.cell,
                    "chunk_index": d.chunk_index,
                    "task_ids": list(d.task_ids),
                    "digest": d.digest,
                }
                for d in self.duplicate_hashes
            ],
            "ratio_drift": [
                {
                    "cell": d.cell,
                    "realized": d.realized,
                    "nominal": d.nominal,
                    "flagged": d.flagged,
                }
                for d in self.ratio_drift
            ],
            "loops": [
                {"task_id": f.task_id, "run_length": f.run_length, "action": f.action}
                for f in self.loops
            ],
            "cutoffs": {
                "rate": self.cutoff_rate,
                "task_ids": list(self.cutoff_task_ids),
            },
            "has_findings": self.has_findings,
        }


def cell_label(records: Sequence[TaskLogRecord]) -> str:
    if not records:
        return "(empty)"
    first = records[0]
    return f"{first.env}/{first.backbone}/{first.method_name}"


def audit(
    cells: Sequence[Sequence[TaskLogRecord]],
    train_ids: Set[str] = frozenset(),
    nominal_ratio: float = 4.0,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    loop_threshold: int = DEFAULT_LOOP_THRESHOLD,
    band: tuple[float, float] = DEFAULT_DRIFT_BAND,
) -> AuditReport:
    """Run all four integrity checks over evaluation cells.

    Drift is assessed against the uncompressed cell sharing the same
    (env, backbone); cells without one, and the uncompressed cells
    themselves, are skipped for that check only.
    """
    cells = [list(cell) for cell in cells]
    eval_ids = {rec.task_id for cell in cells for rec in cell}
    shared = tuple(sorted(eval_ids & set(train_ids)))

    duplicates = []
    for cell in cells:
        label = cell_label(cell)
        for chunk_index, start in enumerate(range(0, len(cell), chunk_size)):
            chunk = cell[start : start + chunk_size]
            seen: dict[str, list[str]] = {}
            for rec in chunk:
                seen.setdefault(trajectory_hash(rec), []).append(rec.task_id)
            for digest, ids in seen.items():
                if len(ids) > 1:
                    duplicates.append(
                        DuplicateHash(
                            cell=label,
                            chunk_index=chunk_index,
                            task_ids=tuple(ids),
                            digest=digest,
                        )
                    )

    drift = _ratio_drift(cells, nominal_ratio, band)

    loops = []
    cutoff_ids = []
    checked = 0
    for cell in cells:
        for rec in cell:
            if not rec.actions:
                continue
            checked += 1
            run_length, action = longest_action_run(rec.actions)
            if run_length >= loop_threshold:
                loops.append(LoopFinding(task_id=rec.task_id, run_length=run_length, action=action))
            if any(detect_cutoff(a) for a in rec.actions):
                cutoff_ids.append(rec.task_id)

    return AuditReport(
        shared_task_ids=shared,
        duplicate_hashes=tuple(duplicates),
        ratio_drift=drift,
        loops=tuple(loops),
        cutoff_task_ids=tuple(cutoff_ids),
        cutoff_rate=len(cutoff_ids) / checked if checked else 0.0,
    )


def _ratio_drift(
    cells: Sequence[Sequence[TaskLogRecord]],
    nominal_ratio: float,
    band: tuple[float, float],
) -> tuple[RatioDrift, ...]:
    if nominal_ratio <= 0:
        raise ValueError(f"nominal_ratio must be positive, got {nominal_ratio}")
    references = {}
    for cell in cells:
        if cell and cell[0].method_name == NOCOMP_NAME:
            references.setdefault((cell[0].env, cell[0].backbone), cell)
    low, high = band
    drift = []
    for cell in cells:
        if not cell or cell[0].method_name == NOCOMP_NAME:
            continue
        reference = references.get((cell[0].env, cell[0].backbone))
        if reference is None:
            continue
        try:
            realized = eff_ratio(cell, reference)
        except (PairingError, ValueError):
            continue
        quotient = realized / nominal_ratio
        drift.append(
            RatioDrift(
                cell=cell_label(cell),
                realized=realized,
                nominal=nominal_ratio,
                flagged=not low <= quotient <= high,
            )
        )
    return tuple(drift)
