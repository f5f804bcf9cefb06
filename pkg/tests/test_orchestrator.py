"""End-to-end tests for the run modes: coupled both-mode, the decoupled
async halves, train-only variants, bench, checkpoints, and metrics."""

import json
import math
import threading

import numpy as np
import pytest

from triad.algorithms import AlgorithmConfig, Variant
from triad.buffer import DPOStore, ExperienceBuffer, SamplePolicy
from triad.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from triad.datapipe import load_tasks, save_tasks
from triad.explorer import ExplorerError, WorkflowRunPolicy, explore_loop
from triad.metrics import METRIC_KEYS, LogicalClock, MetricsWriter, read_metrics
from triad.orchestrator import (
    DataPaths,
    OrchestratorError,
    ParamBox,
    RunConfig,
    SyncState,
    Trainer,
    batch_staleness,
    evaluate_tasks,
    initial_params,
    preference_to_pair,
    publish_params,
    read_published,
    run,
    run_async_explore,
    run_bench,
    run_both,
    run_train,
    run_train_only,
    sync_weights,
)
from triad.policy import Vocabulary, init_params
from triad.records import DPORecord, ExperienceState
from triad.workflows import ROLE_TOKENS, RolloutArgs, make_task

VOCAB = Vocabulary(size=8, eos_token=0)


def bandit_tasks(n, k):
    """Single-turn bandit: reward is the first sampled token / (V-1)."""
    return [
        make_task(
            {"question": str(i + 1), "answer": "", "reward_fn": "scaled_first_token"},
            "example_workflow",
            rollout_args=RolloutArgs(repeat_times=k, temperature=1.0,
                                     max_new_tokens=1),
        )
        for i in range(n)
    ]


def base_config(tmp_path, **overrides):
    cfg = dict(
        mode="both",
        data_dir=str(tmp_path / "data"),
        run_id="test-run",
        seed=3,
        total_steps=4,
        batch_size=2,
        group_size=4,
        sync_interval=1,
        worker_count=1,
        algorithm=AlgorithmConfig(Variant.OPMD_SIMPLE, tau=0.0, beta=0.0,
                                  learning_rate=0.5),
        vocab_size=8,
        eos_token=0,
        num_buckets=16,
    )
    cfg.update(overrides)
    return RunConfig(**cfg)


def write_bandit_tasks(tmp_path, n, k, name="tasks.jsonl"):
    path = tmp_path / name
    save_tasks(path, bandit_tasks(n, k))
    return str(path)


# ---------------------------------------------------------------------------
# config validation


def test_run_config_validation(tmp_path):
    with pytest.raises(OrchestratorError, match="unknown mode"):
        base_config(tmp_path, mode="sprint").validate()
    with pytest.raises(OrchestratorError, match="invalid value for sync_interval"):
        base_config(tmp_path, sync_interval=0, task_paths=["x"]).validate()
    with pytest.raises(OrchestratorError, match="invalid value for eos_token"):
        base_config(tmp_path, eos_token=8, task_paths=["x"]).validate()
    with pytest.raises(OrchestratorError, match="bench requires checkpoint_paths"):
        base_config(tmp_path, mode="bench", eval_task_paths=["e"]).validate()
    with pytest.raises(OrchestratorError, match="bench requires eval_task_paths"):
        base_config(tmp_path, mode="bench", checkpoint_paths=["c"]).validate()
    with pytest.raises(OrchestratorError, match="requires task_paths"):
        base_config(tmp_path, mode="explore").validate()
    base_config(tmp_path, task_paths=["x"]).validate()  # well-formed


def test_sync_state_and_weights():
    params_v0 = init_params(4, VOCAB)
    box = ParamBox(params_v0)
    state = SyncState()
    state = sync_weights(box, params_v0, state)  # same version: no-op
    assert box.get() is params_v0
    newer = init_params(4, VOCAB, version=3)
    state = sync_weights(box, newer, state)
    assert box.get() is newer
    assert state.trainer_version == 3
    assert state.explorer_version == 3
    assert state.steps_since_sync == 0
    with pytest.raises(OrchestratorError):
        SyncState(trainer_version=1, explorer_version=2).check()


def test_batch_staleness_uses_min_version():
    from triad.records import Experience, TaskGroup

    def exp(v):
        return Experience(
            task_key=1, tokens=[1, 2], prompt_length=1, action_mask=[False, True],
            logprobs=[-0.1], reward=1.0, model_version=v,
        )

    group = TaskGroup(task_key=1, experiences=[exp(3), exp(5)])
    assert batch_staleness(6, [group]) == 3
    assert batch_staleness(6, []) == 0


# ---------------------------------------------------------------------------
# checkpoints and the published-weights channel


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(8, VOCAB, version=5, scale=0.7,
                         rng=np.random.default_rng(1))
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert loaded.version == 5
    assert loaded.vocab == params.vocab
    assert loaded.num_buckets == 8
    assert np.array_equal(loaded.logits, params.logits)
    assert not list(tmp_path.glob("*.tmp"))  # atomic write cleans up


def test_checkpoint_rejects_corruption(tmp_path):
    params = init_params(4, VOCAB)
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, params)
    blob = path.read_bytes()
    (tmp_path / "magic.ckpt").write_bytes(b"NOTRIGHT" + blob[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "magic.ckpt")
    (tmp_path / "short.ckpt").write_bytes(blob[:-16])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "fmt.ckpt").write_bytes(blob[:8] + bytes([9]) + blob[9:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "fmt.ckpt")


def test_publish_and_read_latest(tmp_path):
    pub = tmp_path / "published"
    assert read_published(pub) is None
    v1 = init_params(4, VOCAB, version=1)
    v2 = init_params(4, VOCAB, version=2, scale=0.5,
                     rng=np.random.default_rng(0))
    publish_params(pub, v1)
    publish_params(pub, v2)
    latest = read_published(pub)
    assert latest.version == 2
    assert np.array_equal(latest.logits, v2.logits)
    assert (pub / "ckpt-00000001.bin").exists()
    assert (pub / "ckpt-00000002.bin").exists()


# ---------------------------------------------------------------------------
# metrics


def test_metrics_writer_fixed_schema(tmp_path):
    path = tmp_path / "metrics.jsonl"
    writer = MetricsWriter(path, clock=LogicalClock())
    writer.write(step=0, mode="train", loss=1.5, mean_reward=0.5, baseline=0.1,
                 kl_estimate=0.0, staleness=2)
    writer.write(step=1, mode="train", loss=1.0, mean_reward=0.6, baseline=0.2,
                 kl_estimate=0.1, staleness=0)
    writer.close()
    rows = read_metrics(path)
    assert [r["step"] for r in rows] == [0, 1]
    assert [r["wall_ms"] for r in rows] == [1, 2]  # logical clock: 1ms per row
    raw = path.read_text(encoding="utf-8").splitlines()
    assert list(json.loads(raw[0]).keys()) == list(METRIC_KEYS)


# ---------------------------------------------------------------------------
# mode both


def test_both_mode_end_to_end(tmp_path):
    tasks_path = write_bandit_tasks(tmp_path, n=8, k=4)
    config = base_config(tmp_path, task_paths=[tasks_path], total_steps=4)
    report = run_both(config)
    assert report.status == "completed"
    assert report.steps == 4
    assert report.final_version == 4  # one update per step
    rows = read_metrics(report.metrics_path)
    assert len(rows) == 4
    assert all(r["mode"] == "both" for r in rows)
    assert all(r["staleness"] == 0 for r in rows)  # sync_interval 1
    assert [r["wall_ms"] for r in rows] == [1, 2, 3, 4]
    params = load_checkpoint(report.checkpoint_path)
    assert params.version == 4
    assert report.explore_summary["tasks_ok"] == 8
    # the run directory carries the durable report
    on_disk = json.loads(
        (DataPaths(config.data_dir).run_dir("test-run") / "report.json").read_text()
    )
    assert on_disk["final_version"] == 4


def test_both_mode_matches_sequential_reference(tmp_path):
    """Pipelined run == plain sequential explore/train alternation."""
    n_tasks, k, steps, batch = 6, 3, 3, 2
    tasks_path = write_bandit_tasks(tmp_path, n=n_tasks, k=k)
    config = base_config(
        tmp_path, task_paths=[tasks_path], total_steps=steps,
        batch_size=batch, group_size=k, seed=17,
    )
    report = run_both(config)
    got_rows = read_metrics(report.metrics_path)
    got_params = load_checkpoint(report.checkpoint_path)

    # independent sequential reference: same seeds, no threading
    tasks = load_tasks(tasks_path)
    ref_buffer = ExperienceBuffer(tmp_path / "ref-buffer.jsonl")
    trainer = Trainer(initial_params(config), config.algorithm)
    ref_losses = []
    for step in range(steps):
        offset = step * batch
        window = [tasks[(offset + i) % len(tasks)] for i in range(batch)]
        explore_loop(
            window, trainer.params, ref_buffer, policy=config.run_policy,
            worker_count=1, seed=config.seed, task_index_offset=offset,
        )
        result = ref_buffer.sample_batch(
            batch, policy=SamplePolicy.FIFO, group_by_task=True, group_size=k
        )
        ref_losses.append(trainer.step_groups(result.groups).loss)
    ref_buffer.close()

    assert [r["loss"] for r in got_rows] == pytest.approx(ref_losses, abs=0)
    assert np.array_equal(got_params.logits, trainer.params.logits)
    assert got_params.version == trainer.params.version


def test_both_mode_reruns_are_byte_identical(tmp_path):
    outs = []
    for name in ("one", "two"):
        root = tmp_path / name
        root.mkdir()
        tasks_path = write_bandit_tasks(root, n=6, k=4)
        config = base_config(
            root, task_paths=[tasks_path], total_steps=4, sync_interval=2,
            seed=29,
        )
        report = run_both(config)
        run_dir = DataPaths(config.data_dir).run_dir("test-run")
        outs.append(
            (
                (run_dir / "metrics.jsonl").read_bytes(),
                (run_dir / "final.ckpt").read_bytes(),
                (DataPaths(config.data_dir).buffer).read_bytes(),
            )
        )
    assert outs[0] == outs[1]


def test_both_mode_staleness_stays_inside_window(tmp_path):
    tasks_path = write_bandit_tasks(tmp_path, n=8, k=2)
    config = base_config(
        tmp_path, task_paths=[tasks_path], total_steps=8, sync_interval=4,
        batch_size=2, group_size=2, worker_count=2, seed=5,
    )
    report = run_both(config)
    rows = read_metrics(report.metrics_path)
    stale = [r["staleness"] for r in rows]
    # within a window the trainer advances while the explorer's snapshot is
    # pinned, so staleness counts up and resets at every weight sync
    assert stale == [0, 1, 2, 3, 0, 1, 2, 3]
    assert max(stale) < config.sync_interval
    assert report.final_version == 8


def test_both_mode_with_delayed_rewards_completes(tmp_path):
    tasks = [
        make_task(
            {"target": "1 1", "nonce": str(i), "delay_ticks": "1"},
            "string_match_workflow",
            rollout_args=RolloutArgs(repeat_times=2, temperature=1.0,
                                     max_new_tokens=2),
        )
        for i in range(8)
    ]
    path = tmp_path / "delayed.jsonl"
    save_tasks(path, tasks)
    config = base_config(
        tmp_path, task_paths=[str(path)], total_steps=4, batch_size=2,
        group_size=2, sync_interval=2,
    )
    report = run_both(config)
    assert report.status == "completed"
    assert report.steps == 4
    assert report.explore_summary["pending_written"] == 16
    # every withheld reward was delivered by the end-of-run drain
    buf = ExperienceBuffer(DataPaths(config.data_dir).buffer)
    assert buf.stats()["pending"] == 0
    buf.close()


def test_both_mode_survives_skipped_tasks(tmp_path):
    tasks = [
        make_task(
            {"target": "1 1", "nonce": str(i),
             "fail_prob": "1.0" if i % 4 == 0 else "0.0"},
            "string_match_workflow",
            rollout_args=RolloutArgs(repeat_times=2, temperature=0.0,
                                     max_new_tokens=2),
        )
        for i in range(8)
    ]
    path = tmp_path / "flaky.jsonl"
    save_tasks(path, tasks)
    config = base_config(
        tmp_path, task_paths=[str(path)], total_steps=4, batch_size=2,
        group_size=2, run_policy=WorkflowRunPolicy(max_retries=2),
    )
    report = run_both(config)
    assert report.status == "completed"
    assert report.explore_summary["tasks_skipped"] > 0
    buf = ExperienceBuffer(DataPaths(config.data_dir).buffer)
    assert buf.stats()["skips"] == report.explore_summary["tasks_skipped"]
    buf.close()


# ---------------------------------------------------------------------------
# decoupled halves


def test_async_explore_then_train_then_resync(tmp_path):
    tasks_path = write_bandit_tasks(tmp_path, n=6, k=4)
    explore_cfg = base_config(
        tmp_path, mode="explore", run_id="explore-1", task_paths=[tasks_path],
    )
    report1 = run_async_explore(explore_cfg)
    assert report1.mode == "explore"
    assert report1.final_version == 0  # nothing published yet
    assert report1.explore_summary["tasks_ok"] == 6

    train_cfg = base_config(
        tmp_path, mode="train", run_id="train-1", total_steps=3,
        algorithm=AlgorithmConfig(Variant.OPMD_SIMPLE, tau=0.0,
                                  learning_rate=0.5),
        idle_timeout_s=0.3,
    )
    report2 = run_train(train_cfg)
    assert report2.steps == 3
    assert report2.final_version == 3
    paths = DataPaths(train_cfg.data_dir)
    published = read_published(paths.published)
    assert published is not None and published.version == 3
    # published snapshots are monotone and all present
    for v in (1, 2, 3):
        assert (paths.published / f"ckpt-{v:08d}.bin").exists()

    # a fresh explorer adopts the published weights at startup
    report3 = run_async_explore(
        base_config(tmp_path, mode="explore", run_id="explore-2",
                    task_paths=[tasks_path], seed=4)
    )
    assert report3.final_version == 3
    buf = ExperienceBuffer(paths.buffer)
    versions = {e.model_version for e in (buf.get(s) for s in [
        f"s{i:08d}" for i in range(1, buf.size() + 1)
    ])}
    assert 3 in versions  # new rollouts carry the synced version
    buf.close()


def test_async_explorer_polls_mid_run(tmp_path):
    tasks_path = write_bandit_tasks(tmp_path, n=8, k=2)
    config = base_config(
        tmp_path, mode="explore", task_paths=[tasks_path],
        sync_poll_interval=2, run_id="poll-run",
    )
    paths = DataPaths(config.data_dir)
    newer = init_params(config.num_buckets, VOCAB, version=7)
    publish_count = {"n": 0}
    buffer = ExperienceBuffer(paths.buffer)

    # publish mid-run from a separate thread after a few completions
    orig = ExperienceBuffer.put
    def put_and_publish(self, exp):
        sid = orig(self, exp)
        publish_count["n"] += 1
        if publish_count["n"] == 4:
            publish_params(paths.published, newer)
        return sid

    ExperienceBuffer.put = put_and_publish
    try:
        report = run_async_explore(config, buffer=buffer)
    finally:
        ExperienceBuffer.put = orig
    assert report.final_version == 7  # picked up without a restart
    versions = {buffer.get(f"s{i:08d}").model_version
                for i in range(1, buffer.size() + 1)}
    assert versions == {0, 7}
    buffer.close()


def test_async_explorer_stop_kills_run_but_not_data(tmp_path):
    tasks_path = write_bandit_tasks(tmp_path, n=6, k=2)
    config = base_config(
        tmp_path, mode="explore", task_paths=[tasks_path], run_id="stopped",
    )
    stop = threading.Event()
    stop.set()
    with pytest.raises(ExplorerError):
        run_async_explore(config, stop=stop)
    # the partial buffer is intact and trainable
    paths = DataPaths(config.data_dir)
    buf = ExperienceBuffer(paths.buffer)
    assert buf.size() >= 2  # at least the first task landed
    assert buf.ready_count() == buf.size()
    buf.close()
    train_cfg = base_config(
        tmp_path, mode="train", run_id="after-stop", total_steps=1,
        batch_size=1, group_size=2, idle_timeout_s=0.3,
    )
    report = run_train(train_cfg)
    assert report.steps == 1


# ---------------------------------------------------------------------------
# train-only variants


def test_train_only_sft_descends(tmp_path):
    buf_path = DataPaths(str(tmp_path / "data")).buffer
    buf = ExperienceBuffer(buf_path)
    tasks = [
        make_task(
            {"question": str(i + 1), "answer": "1 1"},
            "example_workflow",
            rollout_args=RolloutArgs(repeat_times=2, temperature=1.0,
                                     max_new_tokens=2),
        )
        for i in range(4)
    ]
    explore_loop(tasks, init_params(16, VOCAB), buf, seed=1)
    buf.close()
    config = base_config(
        tmp_path, mode="train", total_steps=2, batch_size=4,
        algorithm=AlgorithmConfig(Variant.SFT, learning_rate=0.5),
        idle_timeout_s=0.3,
    )
    report = run_train_only(config)
    assert report.steps == 2
    rows = read_metrics(report.metrics_path)
    assert rows[1]["loss"] < rows[0]["loss"]
    assert rows[0]["staleness"] == 0


def test_train_only_dpo_descends_below_ln2(tmp_path):
    paths = DataPaths(str(tmp_path / "data"))
    store = DPOStore(paths.dpo)
    records = [
        DPORecord(id=f"p{i}", prompt=f"{i + 1}", chosen="6 2", rejected="3",
                  annotator="t", created_at=0.0)
        for i in range(4)
    ]
    store.commit_batch("seed-batch", records)
    store.close()
    config = base_config(
        tmp_path, mode="train", total_steps=4, batch_size=4,
        algorithm=AlgorithmConfig(Variant.DPO, dpo_beta=0.5, learning_rate=1.0),
    )
    report = run_train(config)
    assert report.steps == 4
    rows = read_metrics(report.metrics_path)
    # uniform start: the very first loss is exactly ln 2, then it descends
    assert rows[0]["loss"] == pytest.approx(math.log(2.0), abs=1e-12)
    assert rows[-1]["loss"] < math.log(2.0)
    assert report.final_version == 4


def test_train_reports_empty_sources(tmp_path):
    config = base_config(tmp_path, mode="train", idle_timeout_s=0.1)
    report = run_train(config)
    assert report.steps == 0
    assert report.reason == "no ready data"
    dpo_cfg = base_config(
        tmp_path, mode="train", run_id="dpo-empty",
        algorithm=AlgorithmConfig(Variant.DPO),
    )
    dpo_report = run_train(dpo_cfg)
    assert dpo_report.steps == 0
    assert dpo_report.reason == "no preference data"


def test_train_stops_when_data_runs_out(tmp_path):
    paths = DataPaths(str(tmp_path / "data"))
    buf = ExperienceBuffer(paths.buffer)
    explore_loop(bandit_tasks(2, 4), init_params(16, VOCAB), buf, seed=2)
    buf.close()
    config = base_config(
        tmp_path, mode="train", total_steps=10, batch_size=2, group_size=4,
        idle_timeout_s=0.2,
    )
    report = run_train(config)
    assert report.steps == 1  # exactly one full batch of groups existed
    assert report.reason == "data exhausted"


def test_opmd_pairwise_trains_off_policy(tmp_path):
    # data sampled once from the uniform behavior policy; training is pure
    # replay, yet greedy reward improves from the argmax-0 floor
    tasks_path = write_bandit_tasks(tmp_path, n=10, k=4)
    run_async_explore(
        base_config(tmp_path, mode="explore", run_id="behavior",
                    task_paths=[tasks_path])
    )
    config = base_config(
        tmp_path, mode="train", run_id="offpolicy", total_steps=5,
        batch_size=2, group_size=4,
        algorithm=AlgorithmConfig(Variant.OPMD_PAIRWISE, tau=1.0,
                                  learning_rate=0.25),
        idle_timeout_s=0.3,
    )
    report = run_train(config)
    assert report.steps == 5
    before = evaluate_tasks(
        initial_params(config), bandit_tasks(4, 1), seed=0, stream=(3, 0, 0)
    )
    after = evaluate_tasks(
        load_checkpoint(report.checkpoint_path), bandit_tasks(4, 1),
        seed=0, stream=(3, 0, 0),
    )
    assert float(np.mean([r["reward"] for r in before])) == 0.0
    assert float(np.mean([r["reward"] for r in after])) > 0.25


# ---------------------------------------------------------------------------
# preference encoding


def test_preference_to_pair_structure():
    rec = DPORecord(id="r", prompt="2 juggle", chosen="5", rejected="1 4",
                    annotator="a", created_at=0.0)
    chosen, rejected = preference_to_pair(rec, VOCAB)
    prompt = chosen.tokens[: chosen.prompt_length]
    assert prompt == rejected.tokens[: rejected.prompt_length]
    assert prompt[0] == ROLE_TOKENS["user"]
    assert prompt[-1] == ROLE_TOKENS["assistant"]
    assert chosen.tokens[chosen.prompt_length:] == [5, VOCAB.eos_token]
    assert rejected.tokens[rejected.prompt_length:] == [1, 4, VOCAB.eos_token]
    assert chosen.state == ExperienceState.READY
    assert chosen.reward == 0.0
    assert all(not m for m in chosen.action_mask[: chosen.prompt_length])
    assert all(chosen.action_mask[chosen.prompt_length:])


# ---------------------------------------------------------------------------
# bench


def make_eval_set(tmp_path, name, targets):
    tasks = [
        make_task(
            {"target": t, "nonce": str(i)},
            "string_match_workflow",
            rollout_args=RolloutArgs(temperature=0.0, max_new_tokens=2),
        )
        for i, t in enumerate(targets)
    ]
    path = tmp_path / name
    save_tasks(path, tasks)
    return str(path)


def test_bench_scores_checkpoints_without_mutation(tmp_path):
    # with eos=7, the uniform greedy policy emits [0, 0] up to the cap, so
    # the action decodes to "0 0" and matches exactly that target
    ckpt_a = tmp_path / "a.ckpt"
    save_checkpoint(ckpt_a, init_params(16, Vocabulary(8, 7), version=1))
    eval_hit = make_eval_set(tmp_path, "hits.jsonl", ["0 0", "0 0", "1"])
    config = base_config(
        tmp_path, mode="bench", run_id="bench-run",
        checkpoint_paths=[str(ckpt_a)], eval_task_paths=[eval_hit],
    )
    report = run_bench(config)
    assert len(report.bench_rows) == 1
    row = report.bench_rows[0]
    assert row["tasks"] == 3
    assert row["success_rate"] == pytest.approx(2 / 3)
    assert row["mean_reward"] == pytest.approx(2 / 3)
    assert not row["failed"]
    # bench.json is durable and matches the report
    paths = DataPaths(config.data_dir)
    on_disk = json.loads((paths.run_dir("bench-run") / "bench.json").read_text())
    assert on_disk == report.bench_rows
    # pure evaluation: no buffer was created
    assert not paths.buffer.exists()


def test_bench_rows_are_deterministic(tmp_path):
    ckpt = tmp_path / "a.ckpt"
    save_checkpoint(
        ckpt, init_params(16, VOCAB, scale=0.5, rng=np.random.default_rng(2))
    )
    eval_set = make_eval_set(tmp_path, "e.jsonl", ["0", "3", "1 2"])
    rows = []
    for run_id in ("b1", "b2"):
        config = base_config(
            tmp_path, mode="bench", run_id=run_id,
            checkpoint_paths=[str(ckpt)], eval_task_paths=[eval_set],
        )
        rows.append(run_bench(config).bench_rows)
    assert rows[0] == rows[1]


def test_bench_isolates_corrupt_checkpoints(tmp_path):
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, init_params(16, VOCAB))
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    eval_set = make_eval_set(tmp_path, "e.jsonl", ["0"])
    config = base_config(
        tmp_path, mode="bench", run_id="bench-mixed",
        checkpoint_paths=[str(bad), str(good)], eval_task_paths=[eval_set],
    )
    report = run_bench(config)
    assert len(report.bench_rows) == 2
    assert report.bench_rows[0]["failed"] is True
    assert report.bench_rows[0]["error"] != ""
    assert report.bench_rows[1]["failed"] is False


def test_run_dispatches_by_mode(tmp_path):
    tasks_path = write_bandit_tasks(tmp_path, n=2, k=2)
    report = run(
        base_config(tmp_path, mode="both", task_paths=[tasks_path],
                    total_steps=1, batch_size=1, group_size=2)
    )
    assert report.mode == "both"
    with pytest.raises(OrchestratorError):
        run_both(base_config(tmp_path, mode="train"))
