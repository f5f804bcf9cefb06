"""Run modes and the explorer/trainer weight-sync protocol.

mode both   — one process, explorer and trainer in lockstep windows of
              sync_interval steps; generation inside a window overlaps
              consumption, and weights sync at window boundaries, so batch
              staleness (trainer_version - model_version) stays below
              sync_interval. With sync_interval 1, worker_count 1 and a
              fixed seed, the run is step-for-step identical to a plain
              sequential rollout-update loop.
mode explore/train — decoupled halves sharing only the buffer files and a
              published-weights directory (atomic-rename snapshots plus a
              LATEST version counter).
mode bench  — read-only greedy evaluation of stored checkpoints.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .algorithms import (
    AlgorithmConfig,
    AlgorithmError,
    LossReport,
    Variant,
    apply_update,
    combine_reports,
    group_loss,
    loss_dpo,
    loss_sft,
)
from .buffer import DPOStore, ExperienceBuffer, SamplePolicy
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .datapipe import load_tasks
from .encoding import encode_text
from .environments import TickScheduler
from .explorer import (
    BENCH_STREAM,
    RunSummary,
    WorkflowRunPolicy,
    explore_loop,
    stream_rng,
)
from .metrics import LogicalClock, MetricsWriter
from .policy import PolicyParams, Vocabulary, init_params
from .records import DPORecord, Experience, ExperienceState, TaskGroup
from .workflows import ROLE_TOKENS, RolloutArgs, Task, run_workflow

MODES = ("both", "explore", "train", "bench")


class OrchestratorError(RuntimeError):
    pass


@dataclass
class RunConfig:
    mode: str = "both"
    data_dir: str = "triad-data"
    run_id: Optional[str] = None
    seed: int = 0
    total_steps: int = 10
    batch_size: int = 2
    group_size: int = 2
    sync_interval: int = 1
    worker_count: int = 1
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    run_policy: WorkflowRunPolicy = field(default_factory=WorkflowRunPolicy)
    task_paths: List[str] = field(default_factory=list)
    eval_task_paths: List[str] = field(default_factory=list)
    checkpoint_paths: List[str] = field(default_factory=list)
    vocab_size: int = 8
    eos_token: int = 0
    num_buckets: int = 64
    init_scale: float = 0.0
    init_checkpoint: Optional[str] = None
    publish_every: int = 1
    sync_poll_interval: int = 1
    idle_timeout_s: float = 5.0
    logical_clock: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise OrchestratorError(f"unknown mode {self.mode!r}")
        checks = [
            ("sync_interval", self.sync_interval >= 1),
            ("total_steps", self.total_steps >= 0),
            ("batch_size", self.batch_size >= 1),
            ("group_size", self.group_size >= 1),
            ("worker_count", self.worker_count >= 1),
            ("vocab_size", self.vocab_size >= 2),
            ("num_buckets", self.num_buckets >= 1),
            ("eos_token", 0 <= self.eos_token < self.vocab_size),
            ("publish_every", self.publish_every >= 1),
            ("sync_poll_interval", self.sync_poll_interval >= 1),
            ("idle_timeout_s", self.idle_timeout_s > 0),
        ]
        for name, ok in checks:
            if not ok:
                raise OrchestratorError(f"invalid value for {name}")
        if self.mode == "bench":
            if not self.checkpoint_paths:
                raise OrchestratorError("mode bench requires checkpoint_paths")
            if not self.eval_task_paths:
                raise OrchestratorError("mode bench requires eval_task_paths")
        if self.mode in ("both", "explore") and not self.task_paths:
            raise OrchestratorError(f"mode {self.mode} requires task_paths")


@dataclass
class SyncState:
    trainer_version: int = 0
    explorer_version: int = 0
    steps_since_sync: int = 0

    def check(self) -> None:
        if self.explorer_version > self.trainer_version:
            raise OrchestratorError("explorer cannot be newer than the trainer")


@dataclass
class RunReport:
    run_id: str
    mode: str
    steps: int = 0
    final_version: int = 0
    status: str = "completed"
    reason: str = ""
    metrics_path: str = ""
    checkpoint_path: str = ""
    explore_summary: Optional[dict] = None
    bench_rows: List[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return asdict(self)


class DataPaths:
    """Fixed on-disk layout under one data directory."""

    def __init__(self, data_dir: Union[str, Path]) -> None:
        self.root = Path(data_dir)
        self.root.mkdir(parents=True, exist_ok=True)

    @property
    def buffer(self) -> Path:
        return self.root / "buffer.jsonl"

    @property
    def dataset(self) -> Path:
        return self.root / "dataset.jsonl"

    @property
    def dpo(self) -> Path:
        return self.root / "dpo.jsonl"

    @property
    def annotations(self) -> Path:
        return self.root / "annotations.jsonl"

    @property
    def published(self) -> Path:
        return self.root / "published"

    @property
    def runs(self) -> Path:
        return self.root / "runs"

    def run_dir(self, run_id: str) -> Path:
        path = self.runs / run_id
        path.mkdir(parents=True, exist_ok=True)
        return path


class ParamBox:
    """The explorer's current snapshot; swapped only between attempts."""

    def __init__(self, params: PolicyParams) -> None:
        self._lock = threading.Lock()
        self._params = params

    def get(self) -> PolicyParams:
        with self._lock:
            return self._params

    def set(self, params: PolicyParams) -> None:
        with self._lock:
            self._params = params


def sync_weights(box: ParamBox, trainer_params: PolicyParams, state: SyncState) -> SyncState:
    """Explorer adopts the trainer's weights; equal versions are a no-op."""
    state = replace(state, trainer_version=trainer_params.version)
    if trainer_params.version > state.explorer_version:
        box.set(trainer_params)
        state = SyncState(
            trainer_version=trainer_params.version,
            explorer_version=trainer_params.version,
            steps_since_sync=0,
        )
    state.check()
    return state


# -- published-weights channel (async mode) -----------------------------------


def publish_params(published_dir: Union[str, Path], params: PolicyParams) -> Path:
    """Atomically publish a snapshot and advance the LATEST pointer."""
    published_dir = Path(published_dir)
    published_dir.mkdir(parents=True, exist_ok=True)
    ckpt = published_dir / f"ckpt-{params.version:08d}.bin"
    save_checkpoint(ckpt, params)
    latest_tmp = published_dir / "LATEST.tmp"
    latest_tmp.write_text(str(params.version), encoding="utf-8")
    latest_tmp.replace(published_dir / "LATEST")
    return ckpt


def read_published(published_dir: Union[str, Path]) -> Optional[PolicyParams]:
    published_dir = Path(published_dir)
    latest = published_dir / "LATEST"
    if not latest.exists():
        return None
    version = int(latest.read_text(encoding="utf-8").strip())
    return load_checkpoint(published_dir / f"ckpt-{version:08d}.bin")


# -- shared helpers ------------------------------------------------------------


def make_vocab(config: RunConfig) -> Vocabulary:
    return Vocabulary(size=config.vocab_size, eos_token=config.eos_token)


def initial_params(config: RunConfig) -> PolicyParams:
    if config.init_checkpoint:
        return load_checkpoint(config.init_checkpoint)
    rng = stream_rng(config.seed, 0) if config.init_scale > 0 else None
    return init_params(
        config.num_buckets,
        make_vocab(config),
        version=0,
        scale=config.init_scale,
        rng=rng,
    )


def _load_all_tasks(paths: Sequence[str]) -> List[Task]:
    tasks: List[Task] = []
    for path in paths:
        tasks.extend(load_tasks(path))
    if not tasks:
        raise OrchestratorError("no tasks found in task_paths")
    return tasks


def _metrics_writer(run_dir: Path, config: RunConfig) -> MetricsWriter:
    clock = LogicalClock() if config.logical_clock else time.monotonic
    return MetricsWriter(run_dir / "metrics.jsonl", clock=clock)


def _write_report(paths: DataPaths, report: RunReport) -> RunReport:
    run_dir = paths.run_dir(report.run_id)
    (run_dir / "report.json").write_text(
        json.dumps(report.to_json_dict(), indent=2), encoding="utf-8"
    )
    return report


def _default_run_id(config: RunConfig) -> str:
    return config.run_id or f"{config.mode}-{time.strftime('%Y%m%d-%H%M%S')}-{config.seed}"


def batch_staleness(trainer_version: int, groups: Sequence[TaskGroup]) -> int:
    versions = [e.model_version for g in groups for e in g.experiences]
    if not versions:
        return 0
    return trainer_version - min(versions)


class Trainer:
    """Owns the parameters and applies one update per step."""

    def __init__(self, params: PolicyParams, algo: AlgorithmConfig) -> None:
        self.params = params
        self.algo = algo
        # Anchor/reference snapshot frozen at construction: the OPMD_SIMPLE
        # regularizer pulls toward it and DPO log-ratios are measured
        # against it.
        self.anchor = params

    def step_groups(self, groups: Sequence[TaskGroup]) -> LossReport:
        reports = [
            group_loss(g, self.params, self.algo, sft_params=self.anchor)
            for g in groups
        ]
        combined = combine_reports(reports)
        self.params = apply_update(
            self.params, combined.gradient, self.algo.learning_rate
        )
        return combined

    def step_sft(self, batch: Sequence[Experience]) -> LossReport:
        report = loss_sft(batch, self.params)
        self.params = apply_update(
            self.params, report.gradient, self.algo.learning_rate
        )
        return report

    def step_dpo(self, pairs: Sequence[Tuple[Experience, Experience]]) -> LossReport:
        report = loss_dpo(pairs, self.params, self.anchor, self.algo.dpo_beta)
        self.params = apply_update(
            self.params, report.gradient, self.algo.learning_rate
        )
        return report


# -- mode both -----------------------------------------------------------------


def run_both(config: RunConfig, buffer: Optional[ExperienceBuffer] = None) -> RunReport:
    config.validate()
    if config.mode != "both":
        raise OrchestratorError("run_both requires mode both")
    paths = DataPaths(config.data_dir)
    run_id = _default_run_id(config)
    run_dir = paths.run_dir(run_id)
    own_buffer = buffer is None
    buffer = buffer or ExperienceBuffer(paths.buffer)
    metrics = _metrics_writer(run_dir, config)
    tasks = _load_all_tasks(config.task_paths)
    trainer = Trainer(initial_params(config), config.algorithm)
    box = ParamBox(trainer.params)
    sync_state = SyncState(
        trainer_version=trainer.params.version,
        explorer_version=trainer.params.version,
    )
    scheduler = TickScheduler()
    cond = threading.Condition()
    progress = {"done": 0, "finished": False}
    totals = RunSummary()

    def on_task_done(_: int) -> None:
        with cond:
            progress["done"] += 1
            cond.notify_all()

    explorer_errors: List[BaseException] = []

    def run_window(window_tasks: List[Task], offset: int) -> None:
        try:
            summary = explore_loop(
                window_tasks,
                box.get,
                buffer,
                policy=config.run_policy,
                worker_count=config.worker_count,
                seed=config.seed,
                scheduler=scheduler,
                drain_on_exit=False,
                on_task_done=on_task_done,
                task_index_offset=offset,
            )
            totals.tasks_total += summary.tasks_total
            totals.tasks_ok += summary.tasks_ok
            totals.tasks_skipped += summary.tasks_skipped
            totals.attempts += summary.attempts
            totals.experiences_written += summary.experiences_written
            totals.pending_written += summary.pending_written
        except BaseException as exc:  # noqa: BLE001
            explorer_errors.append(exc)
        finally:
            with cond:
                progress["finished"] = True
                cond.notify_all()

    step = 0
    max_staleness = 0
    try:
        while step < config.total_steps:
            window = min(config.sync_interval, config.total_steps - step)
            offset = step * config.batch_size
            window_tasks = [
                tasks[(offset + i) % len(tasks)]
                for i in range(window * config.batch_size)
            ]
            with cond:
                progress["done"] = 0
                progress["finished"] = False
            thread = threading.Thread(
                target=run_window, args=(window_tasks, offset), daemon=True
            )
            thread.start()
            for local in range(window):
                target = (local + 1) * config.batch_size
                deadline = time.monotonic() + 60.0
                with cond:
                    while True:
                        if (
                            buffer.ready_group_count(config.group_size)
                            >= config.batch_size
                            or progress["done"] >= target
                            or progress["finished"]
                        ):
                            break
                        if time.monotonic() > deadline:
                            raise OrchestratorError("trainer starved for 60s")
                        cond.wait(0.02)
                result = buffer.sample_batch(
                    config.batch_size,
                    policy=SamplePolicy.FIFO,
                    group_by_task=True,
                    group_size=config.group_size,
                )
                if result.groups:
                    staleness = batch_staleness(trainer.params.version, result.groups)
                    report = trainer.step_groups(result.groups)
                    metrics.write(
                        step=step,
                        mode=config.mode,
                        loss=report.loss,
                        mean_reward=report.metrics["mean_reward"],
                        baseline=report.metrics["baseline"],
                        kl_estimate=report.metrics["kl_estimate"],
                        staleness=staleness,
                    )
                    max_staleness = max(max_staleness, staleness)
                else:
                    metrics.write(step, config.mode, 0.0, 0.0, 0.0, 0.0, 0)
                step += 1
                sync_state = replace(
                    sync_state,
                    trainer_version=trainer.params.version,
                    steps_since_sync=sync_state.steps_since_sync + 1,
                )
            thread.join(timeout=60.0)
            if thread.is_alive():
                raise OrchestratorError("explorer window failed to finish")
            if explorer_errors:
                raise OrchestratorError(
                    f"explorer failed: {explorer_errors[0]}"
                ) from explorer_errors[0]
            sync_state = sync_weights(box, trainer.params, sync_state)
        scheduler.drain()
        ckpt_path = run_dir / "final.ckpt"
        save_checkpoint(ckpt_path, trainer.params)
        report = RunReport(
            run_id=run_id,
            mode=config.mode,
            steps=step,
            final_version=trainer.params.version,
            metrics_path=str(metrics.path),
            checkpoint_path=str(ckpt_path),
            explore_summary=asdict(totals),
        )
        return _write_report(paths, report)
    finally:
        metrics.close()
        if own_buffer:
            buffer.close()


# -- async halves ---------------------------------------------------------------


def run_async_explore(
    config: RunConfig,
    buffer: Optional[ExperienceBuffer] = None,
    stop: Optional[threading.Event] = None,
) -> RunReport:
    """Explorer half: one pass over the task list, polling for published
    weights every sync_poll_interval task completions."""
    config.validate()
    paths = DataPaths(config.data_dir)
    run_id = _default_run_id(config)
    own_buffer = buffer is None
    buffer = buffer or ExperienceBuffer(paths.buffer)
    tasks = _load_all_tasks(config.task_paths)
    published = read_published(paths.published)
    box = ParamBox(published if published is not None else initial_params(config))

    def on_task_done(idx: int) -> None:
        if stop is not None and stop.is_set():
            raise OrchestratorError("explorer stopped")
        if (idx + 1) % config.sync_poll_interval == 0:
            latest = read_published(paths.published)
            if latest is not None and latest.version > box.get().version:
                box.set(latest)

    try:
        summary = explore_loop(
            tasks,
            box.get,
            buffer,
            policy=config.run_policy,
            worker_count=config.worker_count,
            seed=config.seed,
            on_task_done=on_task_done,
        )
        report = RunReport(
            run_id=run_id,
            mode="explore",
            steps=summary.tasks_total,
            final_version=box.get().version,
            explore_summary=asdict(summary),
        )
        return _write_report(paths, report)
    finally:
        if own_buffer:
            buffer.close()


def _dpo_pairs(
    store: DPOStore, vocab: Vocabulary
) -> List[Tuple[Experience, Experience]]:
    return [preference_to_pair(rec, vocab) for rec in store.records()]


def preference_to_pair(
    rec: DPORecord, vocab: Vocabulary
) -> Tuple[Experience, Experience]:
    """Encode one preference record into trainable chosen/rejected sequences."""
    prompt = [ROLE_TOKENS["user"]] + encode_text(rec.prompt, vocab.size)
    prompt = prompt + [ROLE_TOKENS["assistant"]]

    def leg(text: str) -> Experience:
        body = encode_text(text, vocab.size) + [vocab.eos_token]
        return Experience(
            task_key=0,
            tokens=prompt + body,
            prompt_length=len(prompt),
            action_mask=[False] * len(prompt) + [True] * len(body),
            logprobs=[0.0] * len(body),
            reward=0.0,
            model_version=0,
            state=ExperienceState.READY,
        )

    return leg(rec.chosen), leg(rec.rejected)


def run_train(
    config: RunConfig,
    buffer: Optional[ExperienceBuffer] = None,
    dpo_store: Optional[DPOStore] = None,
    refresh: bool = True,
) -> RunReport:
    """Trainer half / train-only mode: consume stored data, publish weights.

    OPMD variants consume task groups from the buffer, SFT consumes flat
    experiences, DPO consumes committed preference pairs. An empty source
    ends the run cleanly with an explicit reason; a starved OPMD/SFT trainer
    idles with bounded backoff up to idle_timeout_s.
    """
    config.validate()
    paths = DataPaths(config.data_dir)
    run_id = _default_run_id(config)
    run_dir = paths.run_dir(run_id)
    own_buffer = buffer is None
    buffer = buffer or ExperienceBuffer(paths.buffer)
    metrics = _metrics_writer(run_dir, config)
    trainer = Trainer(initial_params(config), config.algorithm)
    variant = config.algorithm.variant
    reason = ""
    steps_done = 0
    try:
        if variant == Variant.DPO:
            store = dpo_store or DPOStore(paths.dpo)
            try:
                pairs = _dpo_pairs(store, make_vocab(config))
            finally:
                if dpo_store is None:
                    store.close()
            if not pairs:
                reason = "no preference data"
            else:
                for step in range(config.total_steps):
                    batch = [
                        pairs[(step * config.batch_size + i) % len(pairs)]
                        for i in range(config.batch_size)
                    ]
                    report = trainer.step_dpo(batch)
                    metrics.write(
                        step,
                        config.mode,
                        report.loss,
                        report.metrics["mean_reward"],
                        report.metrics["baseline"],
                        report.metrics["kl_estimate"],
                        0,
                    )
                    steps_done += 1
                    if trainer.params.version % config.publish_every == 0:
                        publish_params(paths.published, trainer.params)
        else:
            grouped = variant in (
                Variant.OPMD_KIMI,
                Variant.OPMD_PAIRWISE,
                Variant.OPMD_SIMPLE,
            )
            for step in range(config.total_steps):
                waited = 0.0
                delay = 0.01
                while True:
                    if refresh:
                        buffer.refresh()
                    available = (
                        buffer.ready_group_count(config.group_size)
                        if grouped
                        else buffer.ready_count()
                    )
                    if available > 0:
                        break
                    if waited >= config.idle_timeout_s:
                        break
                    time.sleep(delay)
                    waited += delay
                    delay = min(delay * 2, 0.16)
                if available == 0:
                    reason = "no ready data" if steps_done == 0 else "data exhausted"
                    break
                if grouped:
                    result = buffer.sample_batch(
                        config.batch_size,
                        policy=SamplePolicy.FIFO,
                        group_by_task=True,
                        group_size=config.group_size,
                    )
                    if not result.groups:
                        reason = "no complete groups"
                        break
                    staleness = batch_staleness(trainer.params.version, result.groups)
                    report = trainer.step_groups(result.groups)
                else:
                    result = buffer.sample_batch(
                        config.batch_size, policy=SamplePolicy.FIFO
                    )
                    if not result.experiences:
                        reason = "no ready data"
                        break
                    staleness = 0
                    report = trainer.step_sft(result.experiences)
                metrics.write(
                    step,
                    config.mode,
                    report.loss,
                    report.metrics["mean_reward"],
                    report.metrics["baseline"],
                    report.metrics["kl_estimate"],
                    staleness,
                )
                steps_done += 1
                if trainer.params.version % config.publish_every == 0:
                    publish_params(paths.published, trainer.params)
        if steps_done > 0:
            publish_params(paths.published, trainer.params)
        ckpt_path = run_dir / "final.ckpt"
        save_checkpoint(ckpt_path, trainer.params)
        report = RunReport(
            run_id=run_id,
            mode=config.mode,
            steps=steps_done,
            final_version=trainer.params.version,
            status="completed",
            reason=reason,
            metrics_path=str(metrics.path),
            checkpoint_path=str(ckpt_path),
        )
        return _write_report(paths, report)
    finally:
        metrics.close()
        if own_buffer:
            buffer.close()


# train-only is the same loop with no explorer running alongside.
run_train_only = run_train


# -- bench -----------------------------------------------------------------------


def evaluate_tasks(
    params: PolicyParams, tasks: Sequence[Task], seed: int, stream: Sequence[int]
) -> List[dict]:
    """Greedy (temperature 0) single-rollout evaluation; no buffer writes."""
    rows = []
    for ti, task in enumerate(tasks):
        greedy = Task(
            task_key=task.task_key,
            raw=dict(task.raw),
            workflow_name=task.workflow_name,
            rollout_args=RolloutArgs(
                repeat_times=1,
                temperature=0.0,
                max_new_tokens=task.rollout_args.max_new_tokens,
            ),
            is_eval=True,
        )
        rng = stream_rng(seed, *stream, ti)
        out = run_workflow(greedy, params, rng)
        exp = out.experiences[0]
        reward = exp.reward if exp.reward is not None else 0.0
        rows.append(
            {
                "reward": reward,
                "success": 1.0 if reward >= 1.0 - 1e-9 else 0.0,
                "env_rounds": exp.info.get("env_rounds", 0.0),
            }
        )
    return rows


def run_bench(config: RunConfig) -> RunReport:
    config.validate()
    if config.mode != "bench":
        raise OrchestratorError("run_bench requires mode bench")
    paths = DataPaths(config.data_dir)
    run_id = _default_run_id(config)
    run_dir = paths.run_dir(run_id)
    eval_sets = [(p, load_tasks(p)) for p in config.eval_task_paths]
    rows: List[dict] = []
    for ci, ckpt_path in enumerate(config.checkpoint_paths):
        try:
            params = load_checkpoint(ckpt_path)
        except CheckpointError as exc:
            for set_path, _ in eval_sets:
                rows.append(
                    {
                        "checkpoint": str(ckpt_path),
                        "eval_set": str(set_path),
                        "tasks": 0,
                        "mean_reward": 0.0,
                        "success_rate": 0.0,
                        "mean_env_rounds": 0.0,
                        "failed": True,
                        "error": str(exc),
                    }
                )
            continue
        version_before = params.version
        for si, (set_path, tasks) in enumerate(eval_sets):
            per_task = evaluate_tasks(params, tasks, config.seed, (BENCH_STREAM, ci, si))
            rows.append(
                {
                    "checkpoint": str(ckpt_path),
                    "eval_set": str(set_path),
                    "tasks": len(per_task),
                    "mean_reward": float(np.mean([r["reward"] for r in per_task])),
                    "success_rate": float(np.mean([r["success"] for r in per_task])),
                    "mean_env_rounds": float(
                        np.mean([r["env_rounds"] for r in per_task])
                    ),
                    "failed": False,
                    "error": "",
                }
            )
        if params.version != version_before:
            raise OrchestratorError("bench must not update parameters")
    (run_dir / "bench.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
    report = RunReport(
        run_id=run_id,
        mode="bench",
        steps=len(rows),
        bench_rows=rows,
    )
    return _write_report(paths, report)


def run(config: RunConfig) -> RunReport:
    """Dispatch a validated config to its mode's entry point."""
    config.validate()
    if config.mode == "both":
        return run_both(config)
    if config.mode == "explore":
        return run_async_explore(config)
    if config.mode == "train":
        return run_train(config)
    return run_bench(config)
