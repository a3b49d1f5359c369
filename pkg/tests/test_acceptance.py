"""Release acceptance gate.

One test per criterion, each printing a single [ACCEPTANCE] pass/fail
line (shown with -s, or in captured output on failure). These tests are
deliberately heavier than the unit suites: big fuzz loops, independent
oracles, and bit-exact golden comparisons.
"""

import json
import math
import random
import time
from contextlib import contextmanager
from pathlib import Path

from stepprune import (
    CompressionConfig,
    CompressionPlan,
    CriticalKeywordScorer,
    DEFAULT_PRICES,
    FloorK,
    LexicalScorer,
    NoComp,
    Role,
    RoleBlock,
    TaskLogRecord,
    audit,
    bootstrap_ci,
    compress,
    compute_floor,
    cost_per_task,
    eff_ratio,
    greedy_fill,
    group_context,
    holm_adjust,
    jaccard_overlap,
    parse,
    render,
    simulate_cell,
    wilcoxon_signed_rank,
)
from stepprune.engine import elision_spans, floor_char_cost, recent_floor

from util import SequenceScorer, random_ctx, random_prompt, random_scores

DATA = Path(__file__).parent / "data"

_MARKER_LEN = {"system": 8, "user": 6, "assistant": 11}


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL", flush=True)
        raise
    print(f"[ACCEPTANCE] {name}: PASS", flush=True)


def test_parser_losslessness_1000_prompts():
    with criterion("parser losslessness, 1,000 prompts under 5 s"):
        rng = random.Random(101)
        prompts = [random_prompt(rng, max_steps=8) for _ in range(1000)]
        start = time.perf_counter()
        failures = sum(1 for p in prompts if parse(p).reassemble() != p)
        elapsed = time.perf_counter() - start
        assert failures == 0
        assert elapsed < 5.0, f"round trips took {elapsed:.2f}s"


def test_floor_invariance_fuzz_10000():
    with criterion("floor invariance, 10,000 draws"):
        rng = random.Random(202)
        for _ in range(10_000):
            ctx = random_ctx(rng, max_steps=10, max_text=30)
            values = [rng.random() for _ in range(ctx.n_steps)]
            cfg = CompressionConfig(
                rho=rng.choice([0.1, 0.25, 0.5, 0.75, 1.0]),
                k_recent=rng.choice([0, 1, 2, 3]),
            )
            rendered = compress(ctx, SequenceScorer(values), cfg).rendered
            if ctx.c_sys is not None:
                assert ctx.c_sys.text in rendered
            assert ctx.c_task.text in rendered
            assert ctx.c_now.text in rendered
            if ctx.c_pend is not None:
                assert ctx.c_pend.text in rendered
            protected = set(recent_floor(ctx.n_steps, cfg.k_recent))
            protected.update(i + 1 for i, p in enumerate(values) if p > cfg.theta_hi)
            for step in ctx.past_steps:
                if step.index in protected:
                    assert step.action_text in rendered
                    assert step.obs_text in rendered


def _oracle_floor_cost(ctx, floor):
    cost = 0
    for block in (ctx.c_sys, ctx.c_task, ctx.c_pend):
        if block is not None:
            cost += len(block.text) + (_MARKER_LEN[block.role.value] if block.explicit else 0)
    for step in ctx.past_steps:
        if step.index in floor:
            cost += len(step.action_text) + len(step.obs_text) + 17
    if ctx.n_steps and ctx.n_steps not in floor:
        cost += len(ctx.c_now.text) + (_MARKER_LEN["user"] if ctx.c_now.explicit else 0)
    return cost


def greedy_oracle(ctx, values, cfg):
    """Independent restatement of the fill rule: repeatedly pick the single
    best remaining step and test it against the budget, never stopping early."""
    n = ctx.n_steps
    floor = set(range(max(1, n - cfg.k_recent + 1), n + 1)) if cfg.k_recent > 0 and n else set()
    floor.update(i for i in range(1, n + 1) if values[i - 1] > cfg.theta_hi)
    budget = math.floor(cfg.rho * len(ctx.reassemble()))
    used = _oracle_floor_cost(ctx, floor)
    kept = set(floor)
    remaining = [s for s in ctx.past_steps if s.index not in floor]
    while remaining:
        best = remaining[0]
        for step in remaining[1:]:
            p_best, p_step = values[best.index - 1], values[step.index - 1]
            if p_step > p_best or (p_step == p_best and step.index > best.index):
                best = step
        remaining.remove(best)
        size = len(best.action_text) + len(best.obs_text) + 17
        if used + size <= budget:
            kept.add(best.index)
            used += size
    return kept


def test_greedy_fill_matches_oracle_10000():
    with criterion("greedy fill equals independent oracle, 10,000 instances"):
        rng = random.Random(303)
        for _ in range(10_000):
            ctx = random_ctx(rng, max_steps=12, max_text=30)
            scores = random_scores(rng, ctx.n_steps, discrete=rng.random() < 0.5)
            values = [s.p for s in scores]
            cfg = CompressionConfig(
                rho=rng.choice([0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0]),
                k_recent=rng.choice([0, 1, 2, 3]),
                theta_hi=rng.choice([0.5, 0.9]),
            )
            floor = compute_floor(ctx, scores, cfg)
            plan = greedy_fill(ctx, scores, floor, cfg)
            assert set(plan.kept_indices) == greedy_oracle(ctx, values, cfg)


def test_budget_soundness_fuzz_10000():
    with criterion("budget soundness, 10,000 draws"):
        rng = random.Random(404)
        violations = 0
        for _ in range(10_000):
            ctx = random_ctx(rng, max_steps=10, max_text=30)
            scores = random_scores(rng, ctx.n_steps)
            cfg = CompressionConfig(
                rho=rng.uniform(0.05, 1.0), k_recent=rng.choice([0, 1, 2, 3])
            )
            floor = compute_floor(ctx, scores, cfg)
            plan = greedy_fill(ctx, scores, floor, cfg)
            if floor_char_cost(ctx, floor) <= plan.budget_b:
                if plan.budget_used > plan.budget_b:
                    violations += 1
            elif plan.budget_used != floor_char_cost(ctx, floor):
                violations += 1
        assert violations == 0


def test_rendering_golden_files():
    with criterion("golden renderings reproduced bit-exact"):
        # end to end: stored shopping-session prompt through the full learned
        # pipeline with the default config and the lexical scorer
        record = json.loads((DATA / "webshop_cli.jsonl").read_text(encoding="utf-8"))
        out = compress(parse(record["prompt"]), LexicalScorer(), CompressionConfig())
        assert out.plan.kept_indices == (2, 5, 6)
        assert out.rendered == (DATA / "webshop_golden.txt").read_text(encoding="utf-8")
        assert "[Steps 3–4] (2 step(s) elided)" in out.rendered

        # render path: lab-session context with a fixed keep set
        kept_text = {
            2: ("pick up metal block from cupboard", "holding metal block, 22°C, 50g."),
            7: ("put metal block in hot water", "block now in beaker; water temp 85°C."),
            8: ("wait 30 seconds", "30 seconds elapsed; block temp now 74°C."),
        }
        blocks = [RoleBlock(Role.USER, "")]
        for i in range(1, 9):
            action, obs = kept_text.get(i, (f"filler move {i}", f"filler result {i}"))
            blocks.append(RoleBlock(Role.ASSISTANT, action))
            blocks.append(RoleBlock(Role.USER, obs))
        ctx = group_context(tuple(blocks))
        kept = {2, 7, 8}
        plan = CompressionPlan(
            floor_indices=frozenset({7, 8}),
            kept_indices=tuple(sorted(kept)),
            scores=(),
            budget_b=0,
            budget_used=0,
            elision_spans=elision_spans(8, kept),
        )
        rendered = render(ctx, plan).rendered
        assert rendered == (DATA / "scienceworld_golden.txt").read_text(encoding="utf-8")


def test_cost_formula_exact_and_linear():
    with criterion("cost anchors exact, linearity over 1,000 draws"):
        assert cost_per_task(10**6, 0, DEFAULT_PRICES, "gpt-4o-mini") == 0.75
        assert cost_per_task(10**6, 10**6, DEFAULT_PRICES, "gpt-5-mini") == 11.25
        rng = random.Random(606)
        backbones = sorted(DEFAULT_PRICES.rates)
        for _ in range(1000):
            backbone = rng.choice(backbones)
            t_in, t_out = rng.randrange(0, 10**7), rng.randrange(0, 10**7)
            base = cost_per_task(t_in, t_out, DEFAULT_PRICES, backbone)
            k = rng.randrange(1, 10)
            assert math.isclose(
                cost_per_task(k * t_in, k * t_out, DEFAULT_PRICES, backbone),
                k * base,
                rel_tol=1e-12,
                abs_tol=1e-15,
            )
            a_in, a_out = rng.randrange(0, 10**6), rng.randrange(0, 10**6)
            assert math.isclose(
                cost_per_task(t_in + a_in, t_out + a_out, DEFAULT_PRICES, backbone),
                base + cost_per_task(a_in, a_out, DEFAULT_PRICES, backbone),
                rel_tol=1e-12,
                abs_tol=1e-15,
            )


def _log(task_id, tokens, method="learned"):
    return TaskLogRecord(
        task_id=task_id,
        method_name=method,
        token_in=(tokens,),
        token_out=(1,),
        final_reward=1.0,
        actions=("a",),
        observations=("o",),
        env="sim",
        backbone="bb",
    )


def test_eff_ratio_is_per_task_mean():
    with criterion("effectiveness ratio is the per-task mean, 3.0 within 1e-12"):
        method = [_log("t1", 100), _log("t2", 1000)]
        nocomp = [_log("t1", 200, "nocomp"), _log("t2", 4000, "nocomp")]
        value = eff_ratio(method, nocomp)
        assert abs(value - 3.0) <= 1e-12
        aggregate = (200 + 4000) / (100 + 1000)
        assert abs(value - aggregate) > 0.5  # the two estimators genuinely differ


def _audit_cells(method_records):
    nocomp = [
        TaskLogRecord(
            task_id=f"t{i}",
            method_name="nocomp",
            token_in=(4000,),
            token_out=(1,),
            final_reward=1.0,
            actions=(f"go {i}", "stop"),
            observations=(f"r{i}", "end"),
            env="sim",
            backbone="bb",
        )
        for i in range(6)
    ]
    return [nocomp, method_records]


def _method_record(i, token_in=1000, actions=None, observations=None):
    return TaskLogRecord(
        task_id=f"t{i}",
        method_name="learned",
        token_in=(token_in,),
        token_out=(1,),
        final_reward=1.0,
        actions=tuple(actions) if actions else (f"go {i}", "stop"),
        observations=tuple(observations) if observations else (f"m{i}", "end"),
        env="sim",
        backbone="bb",
    )


def test_audit_fault_injection_8_scenarios():
    with criterion("audits: 8/8 fault-injection scenarios classified correctly"):
        clean_method = [_method_record(i) for i in range(6)]
        outcomes = []

        # 1-2: train/eval disjointness, planted then clean
        report = audit(_audit_cells(clean_method), train_ids={"t3"})
        outcomes.append(report.shared_task_ids == ("t3",) and report.has_findings)
        report = audit(_audit_cells(clean_method), train_ids={"train-9"})
        outcomes.append(report.disjointness_ok and not report.has_findings)

        # 3-4: duplicate trajectory hash inside one arrival chunk, then clean
        dup = list(clean_method)
        dup[1] = _method_record(1, actions=("copy",), observations=("same",))
        dup[2] = _method_record(2, actions=("copy",), observations=("same",))
        report = audit(_audit_cells(dup))
        outcomes.append(
            len(report.duplicate_hashes) == 1
            and report.duplicate_hashes[0].task_ids == ("t1", "t2")
        )
        report = audit(_audit_cells(clean_method))
        outcomes.append(report.duplicate_hashes == () and not report.has_findings)

        # 5-6: realized/nominal drift of 2.5 (outside the 0.5-2 band), then 1.0
        fast = [_method_record(i, token_in=400) for i in range(6)]
        report = audit(_audit_cells(fast), nominal_ratio=4.0)
        outcomes.append(any(d.flagged for d in report.ratio_drift) and report.has_findings)
        report = audit(_audit_cells(clean_method), nominal_ratio=4.0)
        outcomes.append(
            len(report.ratio_drift) == 1 and not report.ratio_drift[0].flagged
        )

        # 7-8: five identical actions in a row, then only four
        looped = list(clean_method)
        looped[0] = _method_record(0, actions=("poke",) * 5, observations=("r",) * 5)
        report = audit(_audit_cells(looped))
        outcomes.append(
            len(report.loops) == 1 and report.loops[0].run_length == 5 and report.has_findings
        )
        short = list(clean_method)
        short[0] = _method_record(0, actions=("poke",) * 4, observations=("r",) * 4)
        report = audit(_audit_cells(short))
        outcomes.append(report.loops == () and not report.has_findings)

        assert outcomes == [True] * 8, f"scenario outcomes: {outcomes}"


def test_jaccard_brute_force_10000():
    with criterion("kept-set overlap equals brute force, 10,000 pairs"):
        rng = random.Random(909)
        for _ in range(10_000):
            a = {i for i in range(1, 13) if rng.random() < 0.4}
            b = {i for i in range(1, 13) if rng.random() < 0.4}
            union = a | b
            expected = 1.0 if not union else len(a & b) / len(union)
            assert jaccard_overlap(a, b) == expected
            assert jaccard_overlap(b, a) == expected
        assert jaccard_overlap({2, 5, 6}, {5, 6}) == 2 / 3


def test_statistics_behaviors():
    with criterion("statistics: CI collapse, seeded CI, tie handling, Holm"):
        low, high = bootstrap_ci([0.7] * 25, resamples=1000, seed=5)
        assert low == high  # constant rewards collapse the interval to a point
        assert math.isclose(low, 0.7, rel_tol=0, abs_tol=1e-12)
        assert bootstrap_ci([0.5] * 25, resamples=1000, seed=5) == (0.5, 0.5)
        data = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0]
        assert bootstrap_ci(data, seed=11) == bootstrap_ci(data, seed=11)
        assert wilcoxon_signed_rank([0.3, 0.5, 0.9], [0.3, 0.5, 0.9]) == 1.0
        assert holm_adjust([0.01, 0.04]) == (0.02, 0.04)


def test_simulated_env_reward_ordering():
    with criterion("planted-code env: nocomp 1.0, floork(0) 0.0, learned override 1.0"):
        n = 6

        def mean_reward(trajectories):
            return sum(t.final_reward for t in trajectories) / len(trajectories)

        assert mean_reward(simulate_cell(n, method=NoComp(), seed=3)) == 1.0
        assert mean_reward(simulate_cell(n, method=FloorK(k=0), seed=3)) == 0.0
        learned = simulate_cell(n, method="learned", scorer=CriticalKeywordScorer(), seed=3)
        assert mean_reward(learned) == 1.0
