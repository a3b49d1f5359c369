"""Prompt segmentation and structural grouping.

``segment_blocks`` splits raw prompt text on inline role markers and is
total: any string yields at least one block, and reassembly is the exact
inverse. ``group_context`` imposes the conversational grammar

    [system] task (action observation)* [pending-action]

and fails with ``StructureError`` when a prompt cannot be read that way.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional

from .atoms import AtomRuleSet, DEFAULT_RULES
from .errors import StructureError
from .trajectory import Role, RoleBlock, Step

ROLE_MARKER_RE = re.compile(r"\[(SYSTEM|USER|ASSISTANT)\]")

_ROLE_BY_NAME = {
    "SYSTEM": Role.SYSTEM,
    "USER": Role.USER,
    "ASSISTANT": Role.ASSISTANT,
}


def segment_blocks(text: str) -> tuple[RoleBlock, ...]:
    """Split prompt text into role blocks at each marker occurrence.

    Text before the first marker (or a whole marker-less string, including
    the empty string) becomes an implicit system block so that no input is
    rejected and nothing is dropped.
    """
    matches = list(ROLE_MARKER_RE.finditer(text))
    if not matches:
        return (RoleBlock(Role.SYSTEM, text, explicit=False),)
    blocks: list[RoleBlock] = []
    if matches[0].start() > 0:
        blocks.append(RoleBlock(Role.SYSTEM, text[: matches[0].start()], explicit=False))
    for pos, m in enumerate(matches):
        end = matches[pos + 1].start() if pos + 1 < len(matches) else len(text)
        blocks.append(RoleBlock(_ROLE_BY_NAME[m.group(1)], text[m.end() : end]))
    return tuple(blocks)


def reassemble(blocks: Iterable[RoleBlock]) -> str:
    """Concatenate blocks back into prompt text, markers included."""
    return "".join(
        (b.role.marker if b.explicit else "") + b.text for b in blocks
    )


def block_prompt_len(block: RoleBlock) -> int:
    """Characters a block occupies in prompt form, marker included."""
    return block.char_len + (len(block.role.marker) if block.explicit else 0)


@dataclass(frozen=True)
class ParsedContext:
    """A prompt grouped into its structural parts.

    ``c_now`` is the observation the agent must act on next: the final
    user block. When steps exist it is the observation of the last step,
    so it appears both in ``past_steps`` and here; with no steps yet it is
    the task block itself. ``c_pend`` is a trailing action still awaiting
    its observation.
    """

    c_sys: Optional[RoleBlock]
    c_task: RoleBlock
    past_steps: tuple[Step, ...]
    c_now: RoleBlock
    c_pend: Optional[RoleBlock]
    blocks: tuple[RoleBlock, ...]

    @property
    def n_steps(self) -> int:
        return len(self.past_steps)

    @property
    def total_char_len(self) -> int:
        """Characters the full context occupies in prompt form.

        The current observation is counted once even though it aliases the
        last step's observation (or the task block when no steps exist).
        """
        total = block_prompt_len(self.c_task)
        if self.c_sys is not None:
            total += block_prompt_len(self.c_sys)
        total += sum(s.char_len for s in self.past_steps)
        if self.c_pend is not None:
            total += block_prompt_len(self.c_pend)
        return total

    def reassemble(self) -> str:
        return reassemble(self.blocks)


def group_context(
    blocks: Iterable[RoleBlock], rules: AtomRuleSet | None = None
) -> ParsedContext:
    """Group role blocks into a ``ParsedContext``.

    Raises ``StructureError`` when the block sequence cannot be read as an
    optional system block, a user task block, alternating action and
    observation pairs, and at most one trailing unanswered action.
    """
    rules = rules or DEFAULT_RULES
    blocks = tuple(blocks)
    if not blocks:
        raise StructureError("empty context: no blocks")

    c_sys: Optional[RoleBlock] = None
    pos = 0
    if blocks[0].role is Role.SYSTEM:
        c_sys = blocks[0]
        pos = 1
    for off, b in enumerate(blocks[pos:], start=pos):
        if b.role is Role.SYSTEM:
            raise StructureError(f"system block at position {off} (only position 0 is allowed)")

    if pos >= len(blocks) or not any(b.role is Role.USER for b in blocks[pos:]):
        raise StructureError("no current observation: context has no user block")
    if blocks[pos].role is not Role.USER:
        raise StructureError(f"action at position {pos} precedes the task block")
    c_task = blocks[pos]
    pos += 1

    steps: list[Step] = []
    pending: Optional[RoleBlock] = None
    c_now = c_task
    for off, b in enumerate(blocks[pos:], start=pos):
        if pending is None:
            if b.role is Role.USER:
                raise StructureError(f"observation at position {off} has no preceding action")
            pending = b
        else:
            if b.role is Role.ASSISTANT:
                raise StructureError(f"consecutive action blocks at positions {off - 1} and {off}")
            steps.append(
                Step(
                    index=len(steps) + 1,
                    action_text=pending.text,
                    obs_text=b.text,
                    atom=rules.atomize(pending.text, b.text),
                )
            )
            c_now = b
            pending = None

    return ParsedContext(
        c_sys=c_sys,
        c_task=c_task,
        past_steps=tuple(steps),
        c_now=c_now,
        c_pend=pending,
        blocks=blocks,
    )


def parse(text: str, rules: AtomRuleSet | None = None) -> ParsedContext:
    """Segment raw prompt text and group it in one call."""
    return group_context(segment_blocks(text), rules)
