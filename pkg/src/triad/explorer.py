"""Concurrent rollout engine: dispatch tasks, enforce timeouts, retry, skip.

Fault model: an attempt may raise or hang. Hung attempts run on daemon
threads whose results are read only after a successful join, so a zombie
attempt can never write to the buffer. Exhausted retry budgets end in a
durable skip record, never in a stuck run.

Logical time: every task completion advances the tick scheduler by one, and
delayed rewards fire on ticks, keeping delayed-reward tests wall-clock free.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Union

import numpy as np

from .buffer import ExperienceBuffer
from .environments import TickScheduler
from .policy import PolicyParams
from .records import Experience
from .workflows import Task, run_workflow

log = logging.getLogger(__name__)

# rng stream tags; one integer namespace per producer keeps independently
# seeded components reproducible (and lets a reference loop replay them).
EXPLORE_STREAM = 1
TRAIN_STREAM = 2
BENCH_STREAM = 3


class ExplorerError(RuntimeError):
    pass


class AttemptTimeout(RuntimeError):
    pass


def stream_rng(seed: int, *path: int) -> np.random.Generator:
    """default_rng([seed, *path]); the documented reproducibility protocol."""
    return np.random.default_rng([seed, *path])


@dataclass(frozen=True)
class WorkflowRunPolicy:
    """Fault-tolerance knobs.

    max_retries is the total attempt budget for a task: 3 means three
    attempts before the task is skipped (0 and 1 both mean a single
    attempt).
    """

    timeout_per_task: float = 10.0
    max_retries: int = 3
    on_exhaustion: str = "SKIP"

    def __post_init__(self) -> None:
        if self.timeout_per_task <= 0:
            raise ValueError("timeout_per_task must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.on_exhaustion != "SKIP":
            raise ValueError("only SKIP exhaustion is supported")

    @property
    def attempt_budget(self) -> int:
        return max(1, self.max_retries)


@dataclass
class RunSummary:
    tasks_total: int = 0
    tasks_ok: int = 0
    tasks_skipped: int = 0
    attempts: int = 0
    experiences_written: int = 0
    pending_written: int = 0
    ticks: int = 0
    skip_reasons: List[str] = field(default_factory=list)

    @property
    def skip_rate(self) -> float:
        return self.tasks_skipped / max(1, self.tasks_total)


def _attempt(
    task: Task,
    params: PolicyParams,
    rng: np.random.Generator,
    timeout: float,
):
    """Run one workflow attempt on a joinable daemon thread."""
    box: dict = {}

    def target() -> None:
        try:
            box["out"] = run_workflow(task, params, rng)
        except BaseException as exc:  # noqa: BLE001 - surfaced to retry logic
            box["err"] = exc

    thread = threading.Thread(target=target, daemon=True)
    thread.start()
    thread.join(timeout)
    if thread.is_alive():
        raise AttemptTimeout(f"attempt exceeded {timeout}s")
    if "err" in box:
        raise box["err"]
    return box["out"]


def _put_with_backoff(buffer: ExperienceBuffer, exp: Experience) -> str:
    delay = 0.05
    for remaining in (2, 1, 0):
        try:
            return buffer.put(exp)
        except Exception as exc:  # noqa: BLE001
            if remaining == 0:
                raise ExplorerError(f"buffer unavailable: {exc}") from exc
            time.sleep(delay)
            delay *= 2
    raise ExplorerError("unreachable")


def explore_loop(
    tasks: Iterable[Task],
    params_source: Union[PolicyParams, Callable[[], PolicyParams]],
    buffer: ExperienceBuffer,
    policy: WorkflowRunPolicy = WorkflowRunPolicy(),
    worker_count: int = 1,
    seed: int = 0,
    scheduler: Optional[TickScheduler] = None,
    drain_on_exit: bool = True,
    on_task_done: Optional[Callable[[int], None]] = None,
    task_index_offset: int = 0,
) -> RunSummary:
    """Run every task through its workflow; fill the buffer; never hang.

    params_source is consulted once per attempt, so a weight sync lands
    between rollouts, never mid-rollout. With one worker and a fixed seed
    the buffer log is byte-reproducible.
    """
    if worker_count < 1:
        raise ExplorerError("worker_count must be >= 1")
    get_params = (
        params_source if callable(params_source) else (lambda: params_source)
    )
    scheduler = scheduler if scheduler is not None else TickScheduler()
    task_list = list(tasks)
    summary = RunSummary(tasks_total=len(task_list))
    stats_lock = threading.Lock()
    errors: List[BaseException] = []

    def deliver(sample_id: str, reward: float) -> None:
        try:
            buffer.mark_ready(sample_id, reward)
        except Exception:  # noqa: BLE001 - a lost delivery must not kill ticks
            log.exception("delayed reward delivery failed for %s", sample_id)

    def process(idx: int, task: Task) -> None:
        last_err: Optional[BaseException] = None
        for attempt in range(policy.attempt_budget):
            with stats_lock:
                summary.attempts += 1
            params = get_params()
            rng = stream_rng(seed, EXPLORE_STREAM, task_index_offset + idx, attempt)
            try:
                out = _attempt(task, params, rng, policy.timeout_per_task)
            except ExplorerError:
                raise
            except BaseException as exc:  # noqa: BLE001 - retry anything else
                last_err = exc
                continue
            pending = 0
            for exp, dfr in zip(out.experiences, out.deferred):
                sid = _put_with_backoff(buffer, exp)
                if dfr is not None:
                    pending += 1
                    scheduler.schedule(
                        dfr.delay_ticks,
                        lambda sid=sid, r=dfr.reward: deliver(sid, r),
                    )
            with stats_lock:
                summary.tasks_ok += 1
                summary.experiences_written += len(out.experiences)
                summary.pending_written += pending
            return
        reason = f"{type(last_err).__name__}: {last_err}"
        buffer.record_skip(task.task_key, reason)
        with stats_lock:
            summary.tasks_skipped += 1
            summary.skip_reasons.append(reason)

    work: "queue.Queue[Optional[tuple]]" = queue.Queue()
    for item in enumerate(task_list):
        work.put(item)
    for _ in range(worker_count):
        work.put(None)

    def worker() -> None:
        while True:
            item = work.get()
            if item is None:
                return
            idx, task = item
            try:
                process(idx, task)
            except BaseException as exc:  # noqa: BLE001
                errors.append(exc)
            scheduler.tick()
            if on_task_done is not None:
                try:
                    on_task_done(task_index_offset + idx)
                except BaseException as exc:  # noqa: BLE001
                    # A failing completion callback (e.g. a stop signal)
                    # retires this worker; the run surfaces the error.
                    errors.append(exc)
                    return

    threads = [threading.Thread(target=worker, daemon=True) for _ in range(worker_count)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise ExplorerError(f"run-level failure: {errors[0]}") from errors[0]
    if drain_on_exit:
        scheduler.drain()
    summary.ticks = scheduler.now
    return summary
