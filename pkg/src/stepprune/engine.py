"""Step-level context compression.

The primary pipeline keeps a deterministic floor (format blocks, the most
recent steps, and any step scored above a confidence threshold), then
fills the remaining character budget greedily in descending score order.
Dropped steps collapse to compact elision markers. Inference-free
baselines share the same plan/render machinery so their outputs are
directly comparable.

The keep ratio is a soft prior: the floor is retained in full even when
it alone exceeds the budget.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from typing import ClassVar, Iterable, Optional, Union

from .parser import ParsedContext, block_prompt_len, reassemble
from .scoring import Scorer, StepScore, score_steps
from .trajectory import Role, char_count

EN_DASH = "–"
MASK_TOKEN = "[observation masked]"

LEARNED_METHOD = "learned"


@dataclass(frozen=True)
class CompressionConfig:
    """Knobs for the learned pipeline (and budget defaults for baselines).

    ``rho`` is the target keep ratio over total context characters,
    ``k_recent`` the unconditional recency floor, ``theta_hi`` the score
    above which a step bypasses the budget, ``seed`` the stream key for
    randomized baselines.
    """

    rho: float = 0.25
    k_recent: int = 2
    theta_hi: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")
        if not isinstance(self.k_recent, int) or self.k_recent < 0:
            raise ValueError(f"k_recent must be a nonnegative integer, got {self.k_recent!r}")
        if not 0.0 <= self.theta_hi <= 1.0:
            raise ValueError(f"theta_hi must be in [0, 1], got {self.theta_hi}")
        if not isinstance(self.seed, int):
            raise ValueError(f"seed must be an integer, got {self.seed!r}")


@dataclass(frozen=True)
class CompressionPlan:
    """Which steps survive, at what cost, and what got elided.

    ``budget_b`` is the character budget; ``budget_used`` the character
    cost of kept components (floor blocks plus kept steps). Elision
    markers and step headers appear in rendered output but are never
    charged against the budget.
    """

    floor_indices: frozenset[int]
    kept_indices: tuple[int, ...]
    scores: tuple[StepScore, ...]
    budget_b: int
    budget_used: int
    elision_spans: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class CompressedContext:
    rendered: str
    plan: CompressionPlan
    realized_ratio: float


def recent_floor(n_steps: int, k_recent: int) -> frozenset[int]:
    """Ordinals of the last ``k_recent`` steps (all of them when fewer exist)."""
    if k_recent <= 0:
        return frozenset()
    return frozenset(range(max(1, n_steps - k_recent + 1), n_steps + 1))


def compute_floor(
    ctx: ParsedContext, scores: Iterable[StepScore], cfg: CompressionConfig
) -> frozenset[int]:
    """Step ordinals kept unconditionally: recency window plus high-score overrides.

    Format blocks (system, task, current observation, pending action) are
    always kept and are not part of the returned set. Scores must cover
    every past step; the override uses a strict comparison against
    ``theta_hi``.
    """
    score_map = _score_map(ctx, scores)
    floor = set(recent_floor(ctx.n_steps, cfg.k_recent))
    floor.update(i for i, p in score_map.items() if p > cfg.theta_hi)
    return frozenset(floor)


def _score_map(ctx: ParsedContext, scores: Iterable[StepScore]) -> dict[int, float]:
    score_map = {s.index: s.p for s in scores}
    expected = set(range(1, ctx.n_steps + 1))
    if set(score_map) != expected:
        raise ValueError(
            f"scores cover steps {sorted(score_map)}, expected exactly 1..{ctx.n_steps}"
        )
    return score_map


def floor_char_cost(ctx: ParsedContext, floor: frozenset[int]) -> int:
    """Character cost of the always-keep set, each component counted once.

    The current observation usually lives inside the last step; it is
    charged separately only when that step is outside the floor (possible
    with ``k_recent=0``).
    """
    cost = block_prompt_len(ctx.c_task)
    if ctx.c_sys is not None:
        cost += block_prompt_len(ctx.c_sys)
    if ctx.c_pend is not None:
        cost += block_prompt_len(ctx.c_pend)
    cost += sum(s.char_len for s in ctx.past_steps if s.index in floor)
    if ctx.n_steps and ctx.n_steps not in floor:
        cost += block_prompt_len(ctx.c_now)
    return cost


def greedy_fill(
    ctx: ParsedContext,
    scores: Iterable[StepScore],
    floor: frozenset[int],
    cfg: CompressionConfig,
) -> CompressionPlan:
    """Admit non-floor steps in descending score order while they fit.

    The budget is ``floor(rho × total chars)``; ties on equal score break
    toward the more recent step. The floor is never charged against the
    admission check, so a floor larger than the budget simply admits
    nothing extra.
    """
    scores = tuple(scores)
    score_map = _score_map(ctx, scores)
    budget_b = math.floor(cfg.rho * ctx.total_char_len)
    used = floor_char_cost(ctx, floor)
    kept = set(floor)
    candidates = [s for s in ctx.past_steps if s.index not in floor]
    candidates.sort(key=lambda s: (-score_map[s.index], -s.index))
    for step in candidates:
        if used + step.char_len <= budget_b:
            kept.add(step.index)
            used += step.char_len
    return CompressionPlan(
        floor_indices=frozenset(floor),
        kept_indices=tuple(sorted(kept)),
        scores=tuple(sorted(scores, key=lambda s: s.index)),
        budget_b=budget_b,
        budget_used=used,
        elision_spans=elision_spans(ctx.n_steps, kept),
    )


def elision_spans(n_steps: int, kept: set[int] | frozenset[int]) -> tuple[tuple[int, int], ...]:
    """Maximal runs of dropped ordinals, as inclusive (start, end) pairs."""
    spans = []
    start = None
    for i in range(1, n_steps + 2):
        dropped = i <= n_steps and i not in kept
        if dropped and start is None:
            start = i
        elif not dropped and start is not None:
            spans.append((start, i - 1))
            start = None
    return tuple(spans)


def elision_marker(start: int, end: int) -> str:
    if start == end:
        return f"[Step {start}] (elided)"
    return f"[Steps {start}{EN_DASH}{end}] ({end - start + 1} step(s) elided)"


def render(ctx: ParsedContext, plan: CompressionPlan) -> CompressedContext:
    """Produce the compressed prompt text for a plan.

    Format blocks render bare; kept steps render verbatim under ordinal
    headers; each maximal dropped run collapses to one elision marker.
    When the final step itself was dropped its observation still appears,
    since the current observation is never compressed away.
    """
    kept = set(plan.kept_indices)
    parts = []
    if ctx.c_sys is not None and ctx.c_sys.text:
        parts.append(ctx.c_sys.text)
    if ctx.c_task.text:
        parts.append(ctx.c_task.text)
    span_at = {start: (start, end) for start, end in plan.elision_spans}
    for step in ctx.past_steps:
        if step.index in kept:
            parts.append(f"[Step {step.index}] Action: {step.action_text}\nObs: {step.obs_text}")
        elif step.index in span_at:
            parts.append(elision_marker(*span_at[step.index]))
    if ctx.n_steps and ctx.n_steps not in kept:
        parts.append(f"Obs: {ctx.c_now.text}")
    if ctx.c_pend is not None and ctx.c_pend.text:
        parts.append(ctx.c_pend.text)
    rendered = "\n".join(parts)
    return CompressedContext(rendered=rendered, plan=plan, realized_ratio=_ratio(ctx, rendered))


def _ratio(ctx: ParsedContext, rendered: str) -> float:
    return char_count(reassemble(ctx.blocks)) / max(char_count(rendered), 1)


def compress(
    ctx: ParsedContext, scorer: Scorer, cfg: CompressionConfig | None = None
) -> CompressedContext:
    """Full learned pipeline: score, floor, greedy fill, render."""
    cfg = cfg or CompressionConfig()
    scores = score_steps(ctx, scorer)
    floor = compute_floor(ctx, scores, cfg)
    plan = greedy_fill(ctx, scores, floor, cfg)
    return render(ctx, plan)


# --- inference-free baselines ---------------------------------------------


@dataclass(frozen=True)
class NoComp:
    """Identity: the prompt passes through untouched."""

    name: ClassVar[str] = "nocomp"


@dataclass(frozen=True)
class TruncateN:
    """Keep only the trailing ``n_tokens`` whitespace tokens of the prompt.

    Whitespace tokens stand in for model tokens, so this is an
    approximation of a hard last-N token cut.
    """

    n_tokens: int = 2048
    name: ClassVar[str] = "truncate"


@dataclass(frozen=True)
class FloorK:
    """Structural heuristic: keep format blocks and the last ``k`` steps only."""

    k: int = 2
    name: ClassVar[str] = "floork"


@dataclass(frozen=True)
class ObsMask:
    """Keep every action; mask observations outside the last ``k`` positions."""

    k: int = 2
    name: ClassVar[str] = "obsmask"


@dataclass(frozen=True)
class RandomStep:
    """Uniform-random step selection into the same budget as the learned fill.

    ``rho`` and ``seed`` default to the values in the active config. The
    random order is derived per (seed, task id, step ordinal), so results
    do not depend on processing order.
    """

    rho: Optional[float] = None
    seed: Optional[int] = None
    name: ClassVar[str] = "randstep"


BaselineMethod = Union[NoComp, TruncateN, FloorK, ObsMask, RandomStep]

BASELINE_NAMES = {
    NoComp.name: NoComp,
    TruncateN.name: TruncateN,
    FloorK.name: FloorK,
    ObsMask.name: ObsMask,
    RandomStep.name: RandomStep,
}


def baseline_compress(
    ctx: ParsedContext,
    method: BaselineMethod,
    cfg: CompressionConfig | None = None,
    task_id: str = "",
) -> CompressedContext:
    cfg = cfg or CompressionConfig()
    if isinstance(method, NoComp):
        return _nocomp(ctx)
    if isinstance(method, FloorK):
        return _floor_k(ctx, method.k, cfg)
    if isinstance(method, ObsMask):
        return _obs_mask(ctx, method.k, cfg)
    if isinstance(method, RandomStep):
        return _random_step(ctx, method, cfg, task_id)
    if isinstance(method, TruncateN):
        return _truncate_n(ctx, method.n_tokens)
    raise TypeError(f"unknown baseline method {method!r}")


def _nocomp(ctx: ParsedContext) -> CompressedContext:
    n = ctx.n_steps
    total = ctx.total_char_len
    plan = CompressionPlan(
        floor_indices=frozenset(range(1, n + 1)),
        kept_indices=tuple(range(1, n + 1)),
        scores=(),
        budget_b=total,
        budget_used=total,
        elision_spans=(),
    )
    return CompressedContext(rendered=reassemble(ctx.blocks), plan=plan, realized_ratio=1.0)


def _floor_k(ctx: ParsedContext, k: int, cfg: CompressionConfig) -> CompressedContext:
    kept = recent_floor(ctx.n_steps, k)
    plan = CompressionPlan(
        floor_indices=kept,
        kept_indices=tuple(sorted(kept)),
        scores=(),
        budget_b=math.floor(cfg.rho * ctx.total_char_len),
        budget_used=floor_char_cost(ctx, kept),
        elision_spans=elision_spans(ctx.n_steps, kept),
    )
    return render(ctx, plan)


def _obs_mask(ctx: ParsedContext, k: int, cfg: CompressionConfig) -> CompressedContext:
    keep_obs = recent_floor(ctx.n_steps, k)
    parts = []
    if ctx.c_sys is not None and ctx.c_sys.text:
        parts.append(ctx.c_sys.text)
    if ctx.c_task.text:
        parts.append(ctx.c_task.text)
    used = floor_char_cost(ctx, frozenset()) - (
        block_prompt_len(ctx.c_now) if ctx.n_steps else 0
    )
    for step in ctx.past_steps:
        if step.index in keep_obs:
            obs = step.obs_text
            used += step.char_len
        else:
            obs = MASK_TOKEN
            used += step.char_len - char_count(step.obs_text)
        parts.append(f"[Step {step.index}] Action: {step.action_text}\nObs: {obs}")
    if ctx.c_pend is not None and ctx.c_pend.text:
        parts.append(ctx.c_pend.text)
    rendered = "\n".join(parts)
    plan = CompressionPlan(
        floor_indices=keep_obs,
        kept_indices=tuple(sorted(keep_obs)),
        scores=(),
        budget_b=math.floor(cfg.rho * ctx.total_char_len),
        budget_used=used,
        elision_spans=(),
    )
    return CompressedContext(rendered=rendered, plan=plan, realized_ratio=_ratio(ctx, rendered))


def _random_step(
    ctx: ParsedContext, method: RandomStep, cfg: CompressionConfig, task_id: str
) -> CompressedContext:
    rho = cfg.rho if method.rho is None else method.rho
    seed = cfg.seed if method.seed is None else method.seed
    floor = recent_floor(ctx.n_steps, cfg.k_recent)
    budget_b = math.floor(rho * ctx.total_char_len)
    used = floor_char_cost(ctx, floor)
    kept = set(floor)
    candidates = [s for s in ctx.past_steps if s.index not in floor]
    candidates.sort(key=lambda s: _random_key(seed, task_id, s.index))
    for step in candidates:
        if used + step.char_len <= budget_b:
            kept.add(step.index)
            used += step.char_len
    plan = CompressionPlan(
        floor_indices=floor,
        kept_indices=tuple(sorted(kept)),
        scores=(),
        budget_b=budget_b,
        budget_used=used,
        elision_spans=elision_spans(ctx.n_steps, kept),
    )
    return render(ctx, plan)


def _random_key(seed: int, task_id: str, index: int) -> bytes:
    return hashlib.sha256(f"{seed}|{task_id}|{index}".encode("utf-8")).digest()


def _truncate_n(ctx: ParsedContext, n_tokens: int) -> CompressedContext:
    prompt = reassemble(ctx.blocks)
    tokens = list(re.finditer(r"\S+", prompt))
    if len(tokens) <= n_tokens:
        cut = 0
        rendered = prompt
    else:
        cut = tokens[len(tokens) - n_tokens].start()
        rendered = prompt[cut:]
    step_starts: dict[int, int] = {}
    offset = 0
    seen_actions = 0
    for block in ctx.blocks:
        if block.role is Role.ASSISTANT:
            seen_actions += 1
            if seen_actions <= ctx.n_steps:
                step_starts[seen_actions] = offset
        offset += block_prompt_len(block)
    kept = tuple(sorted(i for i, start in step_starts.items() if start >= cut))
    plan = CompressionPlan(
        floor_indices=frozenset(),
        kept_indices=kept,
        scores=(),
        budget_b=n_tokens,
        budget_used=min(n_tokens, len(tokens)),
        elision_spans=(),
    )
    return CompressedContext(rendered=rendered, plan=plan, realized_ratio=_ratio(ctx, rendered))
