"""Cost accounting, compression effectiveness, overlap, and statistics.

Money is tracked in the backbone list-price currency (yuan per million
tokens) with a fixed conversion rate to USD. Effective compression is the
per-task mean of paired input-token ratios, deliberately not the
aggregate-sum ratio, so a single long task cannot dominate the cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import wilcoxon as _scipy_wilcoxon

from .errors import PairingError
from .trajectory import TaskLogRecord


@dataclass(frozen=True)
class Price:
    """List price per million tokens: input and output sides."""

    p_in: float
    p_out: float

    def __post_init__(self) -> None:
        if self.p_in <= 0 or self.p_out <= 0:
            raise ValueError(f"prices must be positive, got {self}")


@dataclass(frozen=True)
class PriceTable:
    rates: Mapping[str, Price]
    fx: float = 7.0

    def __post_init__(self) -> None:
        if self.fx <= 0:
            raise ValueError(f"fx rate must be positive, got {self.fx}")
        object.__setattr__(self, "rates", dict(self.rates))

    def rate(self, backbone: str) -> Price:
        try:
            return self.rates[backbone]
        except KeyError:
            known = ", ".join(sorted(self.rates))
            raise KeyError(f"unknown backbone {backbone!r}; known backbones: {known}") from None

    def to_usd(self, amount: float) -> float:
        return amount / self.fx

    @classmethod
    def from_mapping(cls, raw: Mapping, fx: float | None = None) -> "PriceTable":
        """Build a table from ``{backbone: {p_in, p_out}}`` plus optional ``fx``."""
        raw = dict(raw)
        fx_value = raw.pop("fx", None) if fx is None else fx
        rates = {}
        for backbone, entry in raw.items():
            if not isinstance(entry, Mapping) or "p_in" not in entry or "p_out" not in entry:
                raise ValueError(
                    f"price entry for {backbone!r} must be an object with p_in and p_out"
                )
            rates[backbone] = Price(float(entry["p_in"]), float(entry["p_out"]))
        if fx_value is None:
            fx_value = 7.0
        return cls(rates=rates, fx=float(fx_value))


DEFAULT_PRICES = PriceTable(
    rates={
        "qwen3.5-flash": Price(0.158, 1.58),
        "gpt-4o-mini": Price(0.75, 3.0),
        "gpt-5-mini": Price(1.25, 10.0),
    },
    fx=7.0,
)


def cost_per_task(
    t_in: int,
    t_out: int,
    prices: PriceTable,
    backbone: str,
    usd: bool = False,
) -> float:
    """Spend for one task: (t_in·p_in + t_out·p_out) / 10^6, optionally in USD."""
    if t_in < 0 or t_out < 0:
        raise ValueError(f"token counts must be nonnegative, got {t_in}, {t_out}")
    rate = prices.rate(backbone)
    amount = (t_in * rate.p_in + t_out * rate.p_out) / 1_000_000
    return prices.to_usd(amount) if usd else amount


def _by_task(records: Iterable[TaskLogRecord], label: str) -> dict[str, TaskLogRecord]:
    out: dict[str, TaskLogRecord] = {}
    for rec in records:
        if rec.task_id in out:
            raise PairingError(f"duplicate task_id {rec.task_id!r} in {label} log")
        out[rec.task_id] = rec
    return out


def eff_ratio(
    method_records: Iterable[TaskLogRecord],
    nocomp_records: Iterable[TaskLogRecord],
) -> float:
    """Per-task mean of uncompressed/method input-token ratios, paired by task id.

    This is the mean of ratios, not the ratio of sums: tasks contribute
    equally regardless of how many tokens they consumed.
    """
    method = _by_task(method_records, "method")
    nocomp = _by_task(nocomp_records, "uncompressed")
    if not method:
        raise PairingError("method log is empty")
    missing_m = sorted(set(nocomp) - set(method))
    missing_n = sorted(set(method) - set(nocomp))
    if missing_m:
        raise PairingError(f"task_id {missing_m[0]!r} missing from method log")
    if missing_n:
        raise PairingError(f"task_id {missing_n[0]!r} missing from uncompressed log")
    ratios = []
    for task_id, rec in method.items():
        t_m = rec.input_tokens
        if t_m == 0:
            raise ValueError(f"task {task_id!r} has zero method input tokens")
        ratios.append(nocomp[task_id].input_tokens / t_m)
    return sum(ratios) / len(ratios)


def jaccard_overlap(kept_a: Iterable[int], kept_b: Iterable[int]) -> float:
    """Set overlap |A∩B| / |A∪B|. Two empty sets count as identical (1.0)."""
    a, b = set(kept_a), set(kept_b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def mean_jaccard(pairs: Iterable[tuple[Iterable[int], Iterable[int]]]) -> float:
    """Average overlap across compression calls; errors on an empty cell."""
    values = [jaccard_overlap(a, b) for a, b in pairs]
    if not values:
        raise ValueError("no calls to average")
    return sum(values) / len(values)


def bootstrap_ci(
    rewards: Sequence[float],
    resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean, deterministic given seed."""
    data = np.asarray(list(rewards), dtype=float)
    if data.size == 0:
        raise ValueError("cannot bootstrap an empty reward list")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.size, size=(resamples, data.size))
    means = data[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    return float(low), float(high)


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided paired Wilcoxon p-value; identical vectors give p = 1.0."""
    x = np.asarray(list(a), dtype=float)
    y = np.asarray(list(b), dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"paired vectors differ in length: {x.size} vs {y.size}")
    if x.size == 0:
        raise ValueError("cannot test empty vectors")
    if np.all(x == y):
        return 1.0
    return float(_scipy_wilcoxon(x, y).pvalue)


def holm_adjust(p_values: Sequence[float]) -> tuple[float, ...]:
    """Holm step-down adjustment, monotone and capped at 1."""
    ps = list(p_values)
    if not ps:
        return ()
    order = sorted(range(len(ps)), key=lambda i: ps[i])
    adjusted = [0.0] * len(ps)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (len(ps) - rank) * ps[idx])
        adjusted[idx] = min(1.0, running)
    return tuple(adjusted)


@dataclass(frozen=True)
class PairedTest:
    p_raw: float
    p_adj: float


def paired_tests(
    family: Mapping[str, tuple[Sequence[float], Sequence[float]]],
) -> dict[str, PairedTest]:
    """Wilcoxon per comparison with Holm adjustment across the family."""
    names = list(family)
    raws = [wilcoxon_signed_rank(*family[name]) for name in names]
    adjusted = holm_adjust(raws)
    return {name: PairedTest(p_raw=r, p_adj=a) for name, r, a in zip(names, raws, adjusted)}


@dataclass(frozen=True)
class CellMetrics:
    """Per-(env, backbone, method) summary row."""

    env: str
    backbone: str
    method_name: str
    n_tasks: int
    mr: float
    retention: float
    eff_ratio: float
    cost_per_task: float
    ci_low: float
    ci_high: float


def cell_metrics(
    method_records: Sequence[TaskLogRecord],
    nocomp_records: Sequence[TaskLogRecord],
    prices: PriceTable = DEFAULT_PRICES,
    resamples: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> CellMetrics:
    """Summarize one cell against its uncompressed counterpart."""
    if not method_records:
        raise ValueError("no method records for cell")
    env = method_records[0].env
    backbone = method_records[0].backbone
    method_name = method_records[0].method_name
    for rec in method_records:
        if (rec.env, rec.backbone, rec.method_name) != (env, backbone, method_name):
            raise ValueError(
                f"mixed cell: task {rec.task_id!r} is "
                f"({rec.env!r}, {rec.backbone!r}, {rec.method_name!r}), "
                f"expected ({env!r}, {backbone!r}, {method_name!r})"
            )
    rewards = _rewards(method_records)
    nc_rewards = _rewards(nocomp_records)
    mr = sum(rewards) / len(rewards)
    mr_nc = sum(nc_rewards) / len(nc_rewards)
    retention = mr / mr_nc if mr_nc > 0 else math.nan
    low, high = bootstrap_ci(rewards, resamples=resamples, level=level, seed=seed)
    cost = sum(
        cost_per_task(rec.input_tokens, rec.output_tokens, prices, rec.backbone)
        for rec in method_records
    ) / len(method_records)
    return CellMetrics(
        env=env,
        backbone=backbone,
        method_name=method_name,
        n_tasks=len(method_records),
        mr=mr,
        retention=retention,
        eff_ratio=eff_ratio(method_records, nocomp_records),
        cost_per_task=cost,
        ci_low=low,
        ci_high=high,
    )


def _rewards(records: Sequence[TaskLogRecord]) -> list[float]:
    if not records:
        raise ValueError("no records for cell")
    rewards = []
    for rec in records:
        if rec.final_reward is None:
            raise ValueError(f"task {rec.task_id!r} has no final_reward; cannot compute mr")
        rewards.append(float(rec.final_reward))
    return rewards
