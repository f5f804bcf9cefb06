"""Tests for the concurrent rollout engine: retries, skips, timeouts,
zombie isolation, delayed-reward delivery, and reproducibility."""

import time

import numpy as np
import pytest

from triad.buffer import ExperienceBuffer
from triad.environments import TickScheduler
from triad.explorer import (
    EXPLORE_STREAM,
    ExplorerError,
    RunSummary,
    WorkflowRunPolicy,
    explore_loop,
    stream_rng,
)
from triad.policy import Vocabulary, init_params
from triad.records import ExperienceState
from triad.workflows import (
    Message,
    RolloutArgs,
    Workflow,
    WorkflowOutput,
    concat_to_experience,
    make_task,
    register_workflow,
)

VOCAB = Vocabulary(size=8, eos_token=7)
PARAMS = init_params(32, VOCAB)
GREEDY = RolloutArgs(temperature=0.0, max_new_tokens=2)


def match_task(i, **extra):
    raw = {"target": "0 0", "nonce": str(i)}
    raw.update({k: str(v) for k, v in extra.items()})
    return make_task(raw, "string_match_workflow", rollout_args=GREEDY)


@register_workflow
class SlowWorkflow(Workflow):
    """Test double: hangs long enough to trip the attempt timeout."""

    name = "slow_workflow_test"
    required_keys = ("sleep_s",)

    def run(self, task, params, rng):
        time.sleep(float(task.raw["sleep_s"]))
        exp = concat_to_experience(
            [Message("user", [1]), Message("assistant", [0], [-0.5])],
            final_reward=1.0,
            info={},
            task_key=task.task_key,
            model_version=params.version,
        )
        return WorkflowOutput([exp], [None])


# ---------------------------------------------------------------------------
# policy knobs


def test_run_policy_validation():
    assert WorkflowRunPolicy(max_retries=0).attempt_budget == 1
    assert WorkflowRunPolicy(max_retries=1).attempt_budget == 1
    assert WorkflowRunPolicy(max_retries=3).attempt_budget == 3
    with pytest.raises(ValueError):
        WorkflowRunPolicy(timeout_per_task=0.0)
    with pytest.raises(ValueError):
        WorkflowRunPolicy(max_retries=-1)
    with pytest.raises(ValueError):
        WorkflowRunPolicy(on_exhaustion="RETRY_FOREVER")


def test_stream_rng_protocol():
    mine = stream_rng(5, EXPLORE_STREAM, 2, 3)
    reference = np.random.default_rng([5, 1, 2, 3])
    assert mine.integers(0, 1 << 30, size=8).tolist() == reference.integers(
        0, 1 << 30, size=8
    ).tolist()


# ---------------------------------------------------------------------------
# happy path


def test_explore_loop_fills_buffer(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    tasks = [match_task(i) for i in range(6)]
    summary = explore_loop(tasks, PARAMS, buf, worker_count=3, seed=11)
    assert summary.tasks_total == 6
    assert summary.tasks_ok == 6
    assert summary.tasks_skipped == 0
    assert summary.attempts == 6
    assert summary.experiences_written == 6
    assert buf.size() == 6
    assert buf.ready_count() == 6
    for i in range(6):
        exp = buf.get(f"s{i + 1:08d}")
        assert exp.reward == 1.0
        assert exp.state == ExperienceState.READY
    assert summary.skip_rate == 0.0
    buf.close()


def test_params_source_called_per_attempt(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    calls = []

    def source():
        calls.append(len(calls))
        return PARAMS

    explore_loop([match_task(i) for i in range(4)], source, buf, seed=0)
    assert len(calls) == 4
    buf.close()


def test_worker_count_validation(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    with pytest.raises(ExplorerError):
        explore_loop([], PARAMS, buf, worker_count=0)
    buf.close()


# ---------------------------------------------------------------------------
# fault injection


def test_always_failing_task_is_skipped(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    tasks = [match_task(i, fail_prob=1.0) for i in range(3)]
    policy = WorkflowRunPolicy(max_retries=3)
    summary = explore_loop(tasks, PARAMS, buf, policy=policy, seed=2)
    assert summary.tasks_ok == 0
    assert summary.tasks_skipped == 3
    assert summary.attempts == 9  # full budget burned on every task
    assert summary.skip_rate == 1.0
    assert all("EnvFailure" in r for r in summary.skip_reasons)
    assert buf.size() == 0
    assert buf.stats()["skips"] == 3
    # the skip records are durable
    buf.close()
    reopened = ExperienceBuffer(tmp_path / "buffer.jsonl")
    assert reopened.stats()["skips"] == 3
    reopened.close()


def test_retry_skip_rate_is_cubed_failure_rate(tmp_path):
    # fail_prob 0.3 and a three-attempt budget: P(skip) = 0.3^3 = 2.7%
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    n = 400
    tasks = [match_task(i, fail_prob=0.3) for i in range(n)]
    summary = explore_loop(
        tasks, PARAMS, buf, policy=WorkflowRunPolicy(max_retries=3), seed=7
    )
    assert summary.tasks_ok + summary.tasks_skipped == n
    # 4-sigma band around 0.027 for n=400 (sigma ~ 0.0081)
    assert 0.0 < summary.skip_rate < 0.06
    # attempts reflect the geometric retry mix: between n and 3n
    assert n < summary.attempts < 3 * n
    assert buf.stats()["skips"] == summary.tasks_skipped
    buf.close()


def test_single_attempt_budget(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    tasks = [match_task(0, fail_prob=1.0)]
    summary = explore_loop(
        tasks, PARAMS, buf, policy=WorkflowRunPolicy(max_retries=0), seed=3
    )
    assert summary.attempts == 1
    assert summary.tasks_skipped == 1
    buf.close()


def test_timed_out_attempt_never_writes(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    task = make_task({"sleep_s": "0.3"}, "slow_workflow_test")
    policy = WorkflowRunPolicy(timeout_per_task=0.05, max_retries=1)
    summary = explore_loop([task], PARAMS, buf, policy=policy, seed=0)
    assert summary.tasks_skipped == 1
    assert "AttemptTimeout" in summary.skip_reasons[0]
    assert buf.size() == 0
    # let the zombie attempt finish; its result must stay quarantined
    time.sleep(0.4)
    buf.refresh()
    assert buf.size() == 0
    assert buf.stats()["skips"] == 1
    buf.close()


def test_buffer_failure_escalates_to_run_error(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    buf.close()  # writes now raise
    with pytest.raises(ExplorerError):
        explore_loop([match_task(0)], PARAMS, buf, seed=0)


# ---------------------------------------------------------------------------
# delayed rewards ride logical ticks


def test_delayed_rewards_delivered_by_run_end(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    tasks = [match_task(i, delay_ticks=2) for i in range(3)]
    summary = explore_loop(tasks, PARAMS, buf, worker_count=1, seed=4)
    assert summary.pending_written == 3
    assert summary.ticks >= 3  # one tick per task, plus the final drain
    assert buf.ready_count() == 3
    for exp in buf.sample_batch(3).experiences:
        assert exp.reward == 1.0
        assert exp.state == ExperienceState.READY
    buf.close()


def test_delayed_rewards_respect_tick_schedule(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    sched = TickScheduler()
    tasks = [match_task(i, delay_ticks=10) for i in range(2)]
    explore_loop(
        tasks, PARAMS, buf, worker_count=1, seed=4,
        scheduler=sched, drain_on_exit=False,
    )
    # two ticks elapsed; the deliveries (due at 10 and 11) are still queued
    assert buf.stats()["pending"] == 2
    assert sched.pending() == 2
    sched.drain()
    assert buf.stats()["pending"] == 0
    assert buf.ready_count() == 2
    buf.close()


# ---------------------------------------------------------------------------
# reproducibility


def test_single_worker_buffer_log_is_byte_identical(tmp_path):
    tasks = [
        make_task(
            {"target": "0 0", "nonce": str(i)},
            "string_match_workflow",
            rollout_args=RolloutArgs(repeat_times=2, temperature=1.0,
                                     max_new_tokens=3),
        )
        for i in range(5)
    ]
    paths = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.jsonl"
        buf = ExperienceBuffer(path)
        explore_loop(tasks, PARAMS, buf, worker_count=1, seed=21)
        buf.close()
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert len(paths[0].read_bytes()) > 0


def test_different_seeds_change_rollouts(tmp_path):
    task = make_task(
        {"target": "0 0"},
        "string_match_workflow",
        rollout_args=RolloutArgs(repeat_times=4, temperature=1.0,
                                 max_new_tokens=3),
    )
    logs = []
    for seed in (1, 2):
        path = tmp_path / f"s{seed}.jsonl"
        buf = ExperienceBuffer(path)
        explore_loop([task], PARAMS, buf, worker_count=1, seed=seed)
        buf.close()
        logs.append(path.read_bytes())
    assert logs[0] != logs[1]


def test_multi_worker_run_is_complete_and_consistent(tmp_path):
    buf = ExperienceBuffer(tmp_path / "buffer.jsonl")
    tasks = [match_task(i) for i in range(20)]
    summary = explore_loop(tasks, PARAMS, buf, worker_count=4, seed=9)
    assert summary.tasks_ok == 20
    assert buf.size() == 20
    stats = buf.stats()
    assert stats["tasks"] == 20
    assert stats["ready"] == 20
    buf.close()
