"""Synthetic planted-critical environment.

A deterministic stand-in for live agent benchmarks: every task hides an
access code in the observation of step 2, pads the rest of the trajectory
with irrelevant clutter, and ends at a terminal asking for the code. A
compression method earns reward 1.0 on a task exactly when the code
survives into the final compressed context. Rewards here are synthetic
by construction; they exercise the pipeline, not any real benchmark.

Everything derives from the seed through a hash, so identical seeds give
byte-identical logs on any platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import ClassVar, Optional, Union

from .engine import (
    BASELINE_NAMES,
    BaselineMethod,
    CompressedContext,
    CompressionConfig,
    LEARNED_METHOD,
    baseline_compress,
    compress,
)
from .parser import group_context
from .scoring import LexicalScorer, Scorer, ScoreRequest
from .trajectory import Role, RoleBlock, Trajectory

DEFAULT_ENV = "planted-vault"
DEFAULT_BACKBONE = "qwen3.5-flash"

SYSTEM_TEXT = "You are a careful agent exploring a sealed vault. Reply with one action per turn."
TASK_TEXT = (
    "Find the access code hidden somewhere in the vault and enter it at the terminal when asked."
)
TERMINAL_OBS = "The terminal prompts: enter the access code."
CRITICAL_ACTION = "inspect the desk drawer"

# Clutter vocabulary; deliberately avoids every word of the terminal prompt
# so lexical overlap with the anchor stays low.
_WORDS = (
    "amber", "basalt", "candle", "dusty", "ebony", "fern", "gravel", "hinge",
    "iron", "jar", "kettle", "ladder", "marble", "nail", "oak", "plank",
    "quartz", "rope", "slate", "timber", "urn", "velvet", "wax", "yarn",
    "zinc", "bolt", "crate", "dowel", "easel", "flask", "grate", "hook",
    "ingot", "joist", "keel", "lantern", "mortar", "niche", "oddment", "pulley",
)


def _digest(*parts: object) -> bytes:
    joined = "|".join(str(p) for p in parts)
    return hashlib.sha256(joined.encode("utf-8")).digest()


def _rand_below(bound: int, *parts: object) -> int:
    return int.from_bytes(_digest(*parts)[:8], "big") % bound


def _clutter(word_count: int, *key: object) -> str:
    words = []
    counter = 0
    while len(words) < word_count:
        block = _digest(*key, counter)
        for hi, lo in zip(block[0::2], block[1::2]):
            if len(words) >= word_count:
                break
            words.append(_WORDS[((hi << 8) | lo) % len(_WORDS)])
        counter += 1
    return " ".join(words) + "."


@dataclass(frozen=True)
class CriticalKeywordScorer:
    """Rule scorer for this environment: near-certain on code-bearing steps.

    Any candidate mentioning the keyword scores above the default
    override threshold, so the critical step is pinned into the floor.
    """

    keyword: str = "access code"
    hi: float = 0.99
    lo: float = 0.01
    name: ClassVar[str] = "critical"

    def score(self, request: ScoreRequest) -> float:
        return self.hi if self.keyword in request.candidate.lower() else self.lo


@dataclass(frozen=True)
class ScriptedTask:
    task_id: str
    code: str
    n_steps: int
    blocks: tuple[RoleBlock, ...]


def build_task(seed: int, index: int) -> ScriptedTask:
    """Script one task: system, task, and N steps ending at the terminal."""
    task_id = f"sim-{seed}-{index:04d}"
    code = "code-" + _digest(seed, index, "code").hex()[:8]
    n_steps = 6 + _rand_below(4, seed, index, "length")
    blocks = [
        RoleBlock(Role.SYSTEM, SYSTEM_TEXT),
        RoleBlock(Role.USER, TASK_TEXT),
    ]
    for step in range(1, n_steps + 1):
        if step == 2:
            action = CRITICAL_ACTION
            obs = f"A note reads: the access code is {code}."
        elif step == n_steps:
            action = "walk to the terminal"
            obs = TERMINAL_OBS
        else:
            action = f"open cabinet {step}"
            obs = _clutter(24 + _rand_below(16, seed, index, "len", step), seed, index, "obs", step)
        blocks.append(RoleBlock(Role.ASSISTANT, action))
        blocks.append(RoleBlock(Role.USER, obs))
    return ScriptedTask(task_id=task_id, code=code, n_steps=n_steps, blocks=tuple(blocks))


MethodSpec = Union[str, BaselineMethod]


def _resolve_method(method: MethodSpec) -> tuple[str, Optional[BaselineMethod]]:
    if isinstance(method, str):
        if method == LEARNED_METHOD:
            return LEARNED_METHOD, None
        if method in BASELINE_NAMES:
            return method, BASELINE_NAMES[method]()
        raise ValueError(
            f"unknown method {method!r}; known: "
            f"{', '.join([LEARNED_METHOD, *BASELINE_NAMES])}"
        )
    return method.name, method


def simulate_cell(
    n_tasks: int,
    method: MethodSpec = LEARNED_METHOD,
    scorer: Optional[Scorer] = None,
    cfg: Optional[CompressionConfig] = None,
    seed: int = 0,
    env: str = DEFAULT_ENV,
    backbone: str = DEFAULT_BACKBONE,
) -> list[Trajectory]:
    """Run one method over ``n_tasks`` scripted tasks and log the outcomes.

    Each task issues one model call per step plus the final terminal
    call; input/output token counts are whitespace token counts of the
    compressed context and the scripted action.
    """
    if n_tasks < 0:
        raise ValueError(f"n_tasks must be nonnegative, got {n_tasks}")
    cfg = cfg or CompressionConfig()
    method_name, baseline = _resolve_method(method)
    scorer = scorer or LexicalScorer()
    return [
        _run_task(build_task(seed, index), method_name, baseline, scorer, cfg, env, backbone)
        for index in range(n_tasks)
    ]


def _run_task(
    task: ScriptedTask,
    method_name: str,
    baseline: Optional[BaselineMethod],
    scorer: Scorer,
    cfg: CompressionConfig,
    env: str,
    backbone: str,
) -> Trajectory:
    token_in: list[int] = []
    token_out: list[int] = []
    final_rendered = ""
    final_action = ""
    for call in range(1, task.n_steps + 2):
        ctx = group_context(task.blocks[: 2 * call])
        if baseline is None:
            compressed = compress(ctx, scorer, cfg)
        else:
            compressed = baseline_compress(ctx, baseline, cfg, task_id=task.task_id)
        token_in.append(len(compressed.rendered.split()))
        if call <= task.n_steps:
            action_text = task.blocks[2 * call].text
        else:
            final_rendered = compressed.rendered
            found = task.code in final_rendered
            action_text = f"enter {task.code}" if found else "enter unknown"
            final_action = action_text
        token_out.append(len(action_text.split()))
    reward = 1.0 if task.code in final_rendered else 0.0
    blocks = task.blocks + (RoleBlock(Role.ASSISTANT, final_action),)
    return Trajectory(
        task_id=task.task_id,
        blocks=blocks,
        env=env,
        backbone=backbone,
        final_reward=reward,
        token_in=tuple(token_in),
        token_out=tuple(token_out),
        extras={"method": method_name},
    )
