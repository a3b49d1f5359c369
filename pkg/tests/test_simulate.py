"""Tests for the synthetic planted-code environment."""

import pytest

from stepprune import CriticalKeywordScorer, FloorK, NoComp, ScoreRequest, simulate_cell
from stepprune.jsonl import dump_record
from stepprune.simulate import TERMINAL_OBS, build_task


def rewards(trajectories):
    return [t.final_reward for t in trajectories]


def test_build_task_plants_code_in_step_two():
    task = build_task(seed=0, index=3)
    assert 6 <= task.n_steps <= 9
    assert task.task_id == "sim-0-0003"
    # blocks: system, task, then (action, obs) pairs; step 2's obs sits at 5
    obs_2 = task.blocks[5].text
    assert task.code in obs_2
    assert task.blocks[-1].text == TERMINAL_OBS
    assert task.code.startswith("code-")


def test_build_task_is_deterministic():
    assert build_task(5, 7) == build_task(5, 7)
    assert build_task(5, 7) != build_task(5, 8)
    assert build_task(6, 7).code != build_task(5, 7).code


def test_critical_keyword_scorer():
    scorer = CriticalKeywordScorer()
    assert scorer.score(ScoreRequest(anchor="x", candidate="the Access Code is 5")) == 0.99
    assert scorer.score(ScoreRequest(anchor="x", candidate="dusty shelf")) == 0.01


def test_simulate_nocomp_always_succeeds():
    assert rewards(simulate_cell(5, method=NoComp(), seed=1)) == [1.0] * 5


def test_simulate_floork_zero_always_fails():
    # dropping all history loses the code: the terminal context can't contain it
    assert rewards(simulate_cell(5, method=FloorK(k=0), seed=1)) == [0.0] * 5


def test_simulate_learned_with_critical_scorer_succeeds():
    cells = simulate_cell(5, method="learned", scorer=CriticalKeywordScorer(), seed=1)
    assert rewards(cells) == [1.0] * 5


def test_simulate_is_deterministic():
    a = simulate_cell(4, method="learned", scorer=CriticalKeywordScorer(), seed=9)
    b = simulate_cell(4, method="learned", scorer=CriticalKeywordScorer(), seed=9)
    assert [dump_record(t) for t in a] == [dump_record(t) for t in b]


def test_simulate_token_counts_one_call_per_step_plus_terminal():
    (traj,) = simulate_cell(1, method=NoComp(), seed=2)
    n_steps = sum(1 for b in traj.blocks if b.role.value == "assistant") - 1
    assert len(traj.token_in) == n_steps + 1
    assert len(traj.token_out) == n_steps + 1
    assert all(isinstance(c, int) and c > 0 for c in traj.token_in)
    # uncompressed context grows monotonically call over call
    assert list(traj.token_in) == sorted(traj.token_in)


def test_simulate_compression_reduces_tokens():
    nocomp = simulate_cell(3, method=NoComp(), seed=4)
    floork = simulate_cell(3, method=FloorK(k=0), seed=4)
    for full, cut in zip(nocomp, floork):
        assert sum(cut.token_in) < sum(full.token_in)


def test_simulate_labels_the_log():
    (traj,) = simulate_cell(1, method="floork", seed=0, env="vault", backbone="bb")
    assert traj.env == "vault"
    assert traj.backbone == "bb"
    assert traj.extras["method"] == "floork"
    # the final entered action is appended to the block log
    assert traj.blocks[-1].text.startswith("enter ")


def test_simulate_rejects_unknown_method():
    with pytest.raises(ValueError, match="unknown method"):
        simulate_cell(1, method="mystery")


def test_simulate_rejects_negative_count():
    with pytest.raises(ValueError, match="nonnegative"):
        simulate_cell(-1)


def test_simulate_zero_tasks():
    assert simulate_cell(0) == []
