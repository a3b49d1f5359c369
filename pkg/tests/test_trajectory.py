"""Tests for the core data model."""

import pytest

from stepprune import Role, RoleBlock, Step, TaskLogRecord, Trajectory
from stepprune.atoms import DEFAULT_RULES
from stepprune.trajectory import STEP_MARKER_OVERHEAD, char_count


def test_role_markers():
    assert Role.SYSTEM.marker == "[SYSTEM]"
    assert Role.USER.marker == "[USER]"
    assert Role.ASSISTANT.marker == "[ASSISTANT]"


def test_step_marker_overhead_is_marker_pair():
    assert STEP_MARKER_OVERHEAD == len("[ASSISTANT]") + len("[USER]") == 17


@pytest.mark.parametrize(
    "text,expected",
    [
        ("", 0),
        ("abc", 3),
        ("héllo", 5),
        ("中文", 2),
        ("\U0001f600", 1),  # one scalar value, not a surrogate pair
        ("a\nb", 3),
    ],
)
def test_char_count_counts_scalars(text, expected):
    assert char_count(text) == expected


def test_role_block_char_len_excludes_marker():
    block = RoleBlock(Role.USER, "hello")
    assert block.char_len == 5
    assert block.explicit


def test_step_char_len_includes_marker_pair():
    atom = DEFAULT_RULES.atomize("do x", "saw y")
    step = Step(index=1, action_text="do x", obs_text="saw y", atom=atom)
    assert step.char_len == 4 + 5 + STEP_MARKER_OVERHEAD


def test_trajectory_requires_blocks():
    with pytest.raises(ValueError, match="no blocks"):
        Trajectory(task_id="t", blocks=())


def test_trajectory_step_rewards_require_final_reward():
    blocks = (RoleBlock(Role.USER, "task"),)
    with pytest.raises(ValueError, match="final_reward"):
        Trajectory(task_id="t", blocks=blocks, step_rewards=(0.0, 1.0))
    traj = Trajectory(task_id="t", blocks=blocks, step_rewards=[0.0, 1.0], final_reward=1.0)
    assert traj.step_rewards == (0.0, 1.0)


def test_trajectory_coerces_sequences_to_tuples():
    traj = Trajectory(
        task_id="t",
        blocks=[RoleBlock(Role.USER, "task")],
        token_in=[3, 4],
        token_out=[1, 1],
    )
    assert isinstance(traj.blocks, tuple)
    assert traj.token_in == (3, 4)
    assert traj.token_out == (1, 1)


def test_task_log_record_rejects_bad_token_counts():
    with pytest.raises(ValueError, match="nonnegative"):
        TaskLogRecord(
            task_id="t",
            method_name="m",
            token_in=(3, -1),
            token_out=(),
            final_reward=None,
            actions=(),
            observations=(),
        )


def test_task_log_record_token_sums():
    rec = TaskLogRecord(
        task_id="t",
        method_name="m",
        token_in=(3, 4, 5),
        token_out=(1, 2, 0),
        final_reward=1.0,
        actions=("a",),
        observations=("o",),
    )
    assert rec.input_tokens == 12
    assert rec.output_tokens == 3


def test_from_trajectory_splits_roles():
    blocks = (
        RoleBlock(Role.SYSTEM, "sys text"),
        RoleBlock(Role.USER, "the task"),
        RoleBlock(Role.ASSISTANT, "act 1"),
        RoleBlock(Role.USER, "obs 1"),
        RoleBlock(Role.ASSISTANT, "act 2"),
        RoleBlock(Role.USER, "obs 2"),
    )
    traj = Trajectory(
        task_id="t1",
        blocks=blocks,
        env="webshop",
        backbone="qwen3.5-flash",
        final_reward=0.5,
        token_in=(10, 20),
        token_out=(2, 2),
        extras={"method": "nocomp"},
    )
    rec = TaskLogRecord.from_trajectory(traj)
    assert rec.method_name == "nocomp"
    assert rec.actions == ("act 1", "act 2")
    # the first user block is the task instruction, not an observation
    assert rec.observations == ("obs 1", "obs 2")
    assert rec.system_prompt == "sys text"
    assert rec.env == "webshop"
    assert rec.backbone == "qwen3.5-flash"
    assert rec.final_reward == 0.5


def test_from_trajectory_explicit_method_wins():
    traj = Trajectory(
        task_id="t",
        blocks=(RoleBlock(Role.USER, "task"),),
        extras={"method": "nocomp"},
    )
    rec = TaskLogRecord.from_trajectory(traj, method_name="learned")
    assert rec.method_name == "learned"


def test_from_trajectory_handles_missing_metadata():
    traj = Trajectory(task_id="t", blocks=(RoleBlock(Role.USER, "task"),))
    rec = TaskLogRecord.from_trajectory(traj)
    assert rec.token_in == ()
    assert rec.system_prompt == ""
    assert rec.observations == ()
    assert rec.method_name == ""
