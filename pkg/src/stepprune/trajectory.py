"""Canonical data model for agent trajectory prompts.

A trajectory is an ordered list of role-typed text blocks plus per-task
metadata (rewards, token counts). All character lengths throughout the
package count Unicode scalar values, never bytes, so accounting is stable
across encodings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from .atoms import StepAtom


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"

    @property
    def marker(self) -> str:
        """The literal inline marker that introduces a block of this role."""
        return _MARKERS[self]


_MARKERS = {
    Role.SYSTEM: "[SYSTEM]",
    Role.USER: "[USER]",
    Role.ASSISTANT: "[ASSISTANT]",
}

# Fixed per-step cost of the [ASSISTANT]/[USER] marker pair that frames an
# (action, observation) pair in prompt form.
STEP_MARKER_OVERHEAD = len(Role.ASSISTANT.marker) + len(Role.USER.marker)


def char_count(text: str) -> int:
    """Number of Unicode scalar values in ``text``."""
    return len(text)


@dataclass(frozen=True)
class RoleBlock:
    """One role-typed text block. ``text`` excludes the role marker itself.

    ``explicit`` is False for blocks synthesized from text that appeared
    before the first marker (or for an empty placeholder system block);
    such blocks reassemble without a marker.
    """

    role: Role
    text: str
    explicit: bool = True

    @property
    def char_len(self) -> int:
        return char_count(self.text)


@dataclass(frozen=True)
class Step:
    """One (action, observation) pair, 1-indexed within its trajectory."""

    index: int
    action_text: str
    obs_text: str
    atom: StepAtom

    @property
    def char_len(self) -> int:
        """Characters the step occupies in prompt form, marker pair included."""
        return char_count(self.action_text) + char_count(self.obs_text) + STEP_MARKER_OVERHEAD


@dataclass
class Trajectory:
    task_id: str
    blocks: tuple[RoleBlock, ...]
    env: str = ""
    backbone: str = ""
    step_rewards: Optional[tuple[float, ...]] = None
    final_reward: Optional[float] = None
    token_in: Optional[tuple[int, ...]] = None
    token_out: Optional[tuple[int, ...]] = None
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.blocks = tuple(self.blocks)
        if not self.blocks:
            raise ValueError(f"trajectory {self.task_id!r} has no blocks")
        if self.step_rewards is not None:
            self.step_rewards = tuple(self.step_rewards)
            if self.final_reward is None:
                raise ValueError(
                    f"trajectory {self.task_id!r} has step_rewards but no final_reward"
                )
        if self.token_in is not None:
            self.token_in = tuple(self.token_in)
        if self.token_out is not None:
            self.token_out = tuple(self.token_out)


@dataclass
class TaskLogRecord:
    """Flattened per-task log entry consumed by accounting and audits."""

    task_id: str
    method_name: str
    token_in: tuple[int, ...]
    token_out: tuple[int, ...]
    final_reward: Optional[float]
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    system_prompt: str = ""
    step_rewards: Optional[tuple[float, ...]] = None
    env: str = ""
    backbone: str = ""

    def __post_init__(self) -> None:
        self.token_in = tuple(self.token_in)
        self.token_out = tuple(self.token_out)
        self.actions = tuple(self.actions)
        self.observations = tuple(self.observations)
        if self.step_rewards is not None:
            self.step_rewards = tuple(self.step_rewards)
        for name, counts in (("token_in", self.token_in), ("token_out", self.token_out)):
            for c in counts:
                if not isinstance(c, int) or c < 0:
                    raise ValueError(
                        f"task {self.task_id!r}: {name} must hold nonnegative integers, got {c!r}"
                    )

    @property
    def input_tokens(self) -> int:
        return sum(self.token_in)

    @property
    def output_tokens(self) -> int:
        return sum(self.token_out)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, method_name: str = "") -> "TaskLogRecord":
        """Derive a log record from a trajectory's blocks and metadata.

        Actions are the assistant-block texts in order; observations are the
        user-block texts after the first user block (the task instruction).
        """
        actions = tuple(b.text for b in traj.blocks if b.role is Role.ASSISTANT)
        user_texts = [b.text for b in traj.blocks if b.role is Role.USER]
        observations = tuple(user_texts[1:])
        system_prompt = next(
            (b.text for b in traj.blocks if b.role is Role.SYSTEM), ""
        )
        return cls(
            task_id=traj.task_id,
            method_name=method_name or str(traj.extras.get("method", "")),
            token_in=traj.token_in or (),
            token_out=traj.token_out or (),
            final_reward=traj.final_reward,
            actions=actions,
            observations=observations,
            system_prompt=system_prompt,
            step_rewards=traj.step_rewards,
            env=traj.env,
            backbone=traj.backbone,
        )
