"""Builders and generators shared across the test suite."""

from __future__ import annotations

import random

from stepprune import Role, RoleBlock, StepScore, group_context
from stepprune.parser import ROLE_MARKER_RE, ParsedContext

ALPHABET = (
    "abcdefghijklmnopqrstuvwxyz"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "0123456789"
    " .,;:!?()[]-_/'\"\n"
    "éüß°–中文\U0001f600"
)


def rand_text(rng: random.Random, max_len: int = 40, allow_empty: bool = True) -> str:
    length = rng.randrange(0 if allow_empty else 1, max_len + 1)
    while True:
        text = "".join(rng.choices(ALPHABET, k=length))
        if not ROLE_MARKER_RE.search(text):
            return text


def random_prompt(rng: random.Random, max_steps: int = 6) -> str:
    """A structurally valid role-marked prompt with randomized content."""
    parts = []
    style = rng.random()
    if style < 0.3:
        parts.append(rand_text(rng, allow_empty=False))
    elif style < 0.8:
        parts.append("[SYSTEM]" + rand_text(rng))
    parts.append("[USER]" + rand_text(rng))
    for _ in range(rng.randrange(0, max_steps + 1)):
        parts.append("[ASSISTANT]" + rand_text(rng))
        parts.append("[USER]" + rand_text(rng))
    if rng.random() < 0.25:
        parts.append("[ASSISTANT]" + rand_text(rng))
    return "".join(parts)


def make_blocks(
    n_steps: int,
    sys_text: str | None = "be helpful",
    task_text: str = "solve the task",
    pend_text: str | None = None,
    action=None,
    obs=None,
) -> tuple[RoleBlock, ...]:
    blocks = []
    if sys_text is not None:
        blocks.append(RoleBlock(Role.SYSTEM, sys_text))
    blocks.append(RoleBlock(Role.USER, task_text))
    for i in range(1, n_steps + 1):
        blocks.append(RoleBlock(Role.ASSISTANT, action(i) if action else f"act {i}"))
        blocks.append(RoleBlock(Role.USER, obs(i) if obs else f"obs {i}"))
    if pend_text is not None:
        blocks.append(RoleBlock(Role.ASSISTANT, pend_text))
    return tuple(blocks)


def make_ctx(n_steps: int, **kwargs) -> ParsedContext:
    return group_context(make_blocks(n_steps, **kwargs))


def random_ctx(
    rng: random.Random,
    max_steps: int = 12,
    min_steps: int = 0,
    max_text: int = 60,
) -> ParsedContext:
    blocks = []
    if rng.random() < 0.8:
        blocks.append(RoleBlock(Role.SYSTEM, rand_text(rng, max_text)))
    blocks.append(RoleBlock(Role.USER, rand_text(rng, max_text, allow_empty=False)))
    for _ in range(rng.randrange(min_steps, max_steps + 1)):
        blocks.append(RoleBlock(Role.ASSISTANT, rand_text(rng, max_text)))
        blocks.append(RoleBlock(Role.USER, rand_text(rng, 2 * max_text)))
    if rng.random() < 0.3:
        blocks.append(RoleBlock(Role.ASSISTANT, rand_text(rng, max_text)))
    return group_context(tuple(blocks))


def random_scores(rng: random.Random, n_steps: int, discrete: bool = False):
    """A full score vector; discrete mode forces ties for tie-break coverage."""
    levels = (0.1, 0.3, 0.5, 0.7, 0.95)
    return tuple(
        StepScore(index=i, p=rng.choice(levels) if discrete else rng.random())
        for i in range(1, n_steps + 1)
    )


class SequenceScorer:
    """Feeds predetermined probabilities back in call order."""

    def __init__(self, values):
        self._values = list(values)
        self._next = 0

    def score(self, request) -> float:
        value = self._values[self._next]
        self._next += 1
        return value
