"""Human preference annotation: task lifecycle, polling, atomic commits.

Pairs of candidate responses become annotation tasks (A/B order randomized
per task with the seed recorded, to control position bias). Annotators
claim the oldest open task, submit a choice, and a batch commits
all-or-nothing into the preference store. Every state change is an event in
an append-only log, so a crash at any boundary replays to a consistent
state and a half-annotated batch never leaks partial records.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .buffer import DPOStore
from .records import DPORecord, PreferenceSource
from .storage import JsonlLog

DEFAULT_POLL_TIMEOUT_S = 3600.0
DEFAULT_CLAIM_TTL_S = 3600.0


class AnnotationError(RuntimeError):
    pass


class ClaimConflict(AnnotationError):
    """Task not claimable/submittable by this annotator in its current state."""


class TaskStatus(str, enum.Enum):
    OPEN = "OPEN"
    CLAIMED = "CLAIMED"
    SUBMITTED = "SUBMITTED"
    EXPIRED = "EXPIRED"


class BatchState(str, enum.Enum):
    PENDING = "PENDING"
    COMMITTED = "COMMITTED"
    ABORTED = "ABORTED"


@dataclass
class AnnotationTask:
    id: str
    batch_id: str
    pair_index: int
    prompt: str
    answer_a: str
    answer_b: str
    swapped: bool  # True: answer_a shows the pair's second response
    status: TaskStatus = TaskStatus.OPEN
    created_at: float = 0.0
    deadline: Optional[float] = None
    annotator: Optional[str] = None
    chosen: Optional[str] = None  # "A" | "B"
    source_a: Optional[str] = None
    source_b: Optional[str] = None

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "batch_id": self.batch_id,
            "pair_index": self.pair_index,
            "prompt": self.prompt,
            "answer_a": self.answer_a,
            "answer_b": self.answer_b,
            "swapped": self.swapped,
            "status": self.status.value,
            "created_at": self.created_at,
            "deadline": self.deadline,
            "annotator": self.annotator,
            "chosen": self.chosen,
            "source_a": self.source_a,
            "source_b": self.source_b,
        }


@dataclass
class AnnotationBatch:
    batch_id: str
    seed: int
    task_ids: List[str] = field(default_factory=list)
    state: BatchState = BatchState.PENDING
    rejected_pairs: int = 0


class AnnotationService:
    """Event-sourced annotation store feeding a DPOStore."""

    def __init__(
        self,
        path: Union[str, Path],
        dpo_store: DPOStore,
        clock: Callable[[], float] = time.time,
        claim_ttl_s: float = DEFAULT_CLAIM_TTL_S,
    ) -> None:
        self._lock = threading.RLock()
        self._available = threading.Condition(self._lock)
        self._log = JsonlLog(path)
        self._dpo = dpo_store
        self._clock = clock
        self._claim_ttl = claim_ttl_s
        self._tasks: Dict[str, AnnotationTask] = {}
        self._task_order: List[str] = []
        self._batches: Dict[str, AnnotationBatch] = {}
        self._lineage: Dict[str, Tuple[Optional[str], Optional[str]]] = {}
        self._next_batch = 1
        for event in JsonlLog.replay(self._log.path):
            self._apply(event)

    # -- event machinery ------------------------------------------------------

    def _append(self, event: dict) -> None:
        self._log.append(event)
        self._apply(event)

    def _apply(self, event: dict) -> None:
        kind = event["kind"]
        if kind == "batch":
            batch = AnnotationBatch(
                batch_id=event["batch_id"],
                seed=event["seed"],
                rejected_pairs=event["rejected_pairs"],
            )
            self._batches[batch.batch_id] = batch
            num = event["batch_id"].rsplit("-", 1)[-1]
            if num.isdigit():
                self._next_batch = max(self._next_batch, int(num) + 1)
        elif kind == "task":
            task = AnnotationTask(
                id=event["id"],
                batch_id=event["batch_id"],
                pair_index=event["pair_index"],
                prompt=event["prompt"],
                answer_a=event["answer_a"],
                answer_b=event["answer_b"],
                swapped=event["swapped"],
                created_at=event["created_at"],
                source_a=event.get("source_a"),
                source_b=event.get("source_b"),
            )
            self._tasks[task.id] = task
            self._task_order.append(task.id)
            self._batches[task.batch_id].task_ids.append(task.id)
        elif kind == "claim":
            task = self._tasks[event["task_id"]]
            task.status = TaskStatus.CLAIMED
            task.annotator = event["annotator"]
            task.deadline = event["deadline"]
        elif kind == "expire":
            task = self._tasks[event["task_id"]]
            task.status = TaskStatus.EXPIRED
            task.annotator = None
            task.deadline = None
        elif kind == "submit":
            task = self._tasks[event["task_id"]]
            task.status = TaskStatus.SUBMITTED
            task.chosen = event["chosen"]
            task.annotator = event["annotator"]
        elif kind == "lineage":
            self._lineage[event["task_id"]] = (
                event.get("chosen_source"),
                event.get("rejected_source"),
            )
        elif kind == "commit":
            self._batches[event["batch_id"]].state = BatchState.COMMITTED
        elif kind == "abort":
            self._batches[event["batch_id"]].state = BatchState.ABORTED
        else:
            raise AnnotationError(f"unknown annotation event kind {kind!r}")

    # -- task creation ---------------------------------------------------------

    def create_batch(
        self,
        pairs: Sequence[dict],
        seed: int = 0,
        annotators_per_task: int = 1,
    ) -> AnnotationBatch:
        """Pairs {prompt, response_a, response_b[, source_a, source_b]} ->
        OPEN tasks. Pairs whose two sides carry different prompts are
        rejected individually; the rest of the batch proceeds."""
        if annotators_per_task < 1:
            raise AnnotationError("annotators_per_task must be >= 1")
        with self._lock:
            batch_id = f"batch-{self._next_batch:06d}"
            accepted = []
            rejected = 0
            for idx, pair in enumerate(pairs):
                if "prompt_b" in pair and pair["prompt_b"] != pair["prompt"]:
                    rejected += 1
                    continue
                if pair["response_a"] == pair["response_b"]:
                    rejected += 1
                    continue
                accepted.append((idx, pair))
            self._append(
                {
                    "kind": "batch",
                    "batch_id": batch_id,
                    "seed": seed,
                    "rejected_pairs": rejected,
                }
            )
            now = self._clock()
            for idx, pair in accepted:
                rng = np.random.default_rng([max(seed, 0), idx])
                swapped = bool(rng.random() < 0.5)
                a, b = pair["response_a"], pair["response_b"]
                src_a, src_b = pair.get("source_a"), pair.get("source_b")
                if swapped:
                    a, b = b, a
                    src_a, src_b = src_b, src_a
                for copy in range(annotators_per_task):
                    self._append(
                        {
                            "kind": "task",
                            "id": f"{batch_id}-t{idx:04d}-{copy}",
                            "batch_id": batch_id,
                            "pair_index": idx,
                            "prompt": pair["prompt"],
                            "answer_a": a,
                            "answer_b": b,
                            "swapped": swapped,
                            "created_at": now,
                            "source_a": src_a,
                            "source_b": src_b,
                        }
                    )
            self._available.notify_all()
            return self._batches[batch_id]

    # -- annotator side ----------------------------------------------------------

    def _expire_stale(self) -> None:
        now = self._clock()
        for task in self._tasks.values():
            if (
                task.status == TaskStatus.CLAIMED
                and task.deadline is not None
                and now > task.deadline
            ):
                self._append({"kind": "expire", "task_id": task.id})

    def _claim_oldest(self, annotator: str) -> Optional[AnnotationTask]:
        self._expire_stale()
        for tid in self._task_order:
            task = self._tasks[tid]
            batch = self._batches[task.batch_id]
            if batch.state != BatchState.PENDING:
                continue
            # EXPIRED tasks return to the pool rather than dead-ending.
            if task.status in (TaskStatus.OPEN, TaskStatus.EXPIRED):
                self._append(
                    {
                        "kind": "claim",
                        "task_id": tid,
                        "annotator": annotator,
                        "deadline": self._clock() + self._claim_ttl,
                    }
                )
                return task
        return None

    def poll_next(
        self,
        annotator: str,
        wait: bool = True,
        timeout_s: float = DEFAULT_POLL_TIMEOUT_S,
    ) -> Optional[AnnotationTask]:
        """Claim the oldest open task; optionally block until one appears.

        Claiming is atomic under the store lock: two concurrent pollers can
        never receive the same task. Returns None exactly when the wait
        timed out (or wait=False found nothing)."""
        if timeout_s < 0:
            raise AnnotationError("timeout_s must be >= 0")
        deadline = time.monotonic() + timeout_s
        with self._lock:
            while True:
                task = self._claim_oldest(annotator)
                if task is not None:
                    return task
                if not wait:
                    return None
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._available.wait(min(remaining, 0.5))

    def submit(self, task_id: str, chosen: str, annotator: str) -> None:
        if chosen not in ("A", "B"):
            raise AnnotationError(f"chosen must be 'A' or 'B', got {chosen!r}")
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise AnnotationError(f"unknown task {task_id!r}")
            if task.status != TaskStatus.CLAIMED or task.annotator != annotator:
                raise ClaimConflict(
                    f"task {task_id} is {task.status.value} by {task.annotator!r}"
                )
            self._append(
                {
                    "kind": "submit",
                    "task_id": task_id,
                    "chosen": chosen,
                    "annotator": annotator,
                }
            )

    # -- commit --------------------------------------------------------------------

    def _resolve_pair(
        self, tasks: List[AnnotationTask]
    ) -> Optional[Tuple[str, str, str, str]]:
        """(prompt, chosen_text, rejected_text, annotator) or None on a tie."""
        votes = {"A": 0, "B": 0}
        for task in tasks:
            votes[task.chosen] += 1
        if votes["A"] == votes["B"]:
            return None  # tie: discard the pair
        winner = "A" if votes["A"] > votes["B"] else "B"
        lead = tasks[0]
        chosen_text = lead.answer_a if winner == "A" else lead.answer_b
        rejected_text = lead.answer_b if winner == "A" else lead.answer_a
        if len(tasks) == 1:
            annotator = lead.annotator or "unknown"
        else:
            annotator = f"majority-{len(tasks)}"
        return lead.prompt, chosen_text, rejected_text, annotator

    def commit_batch(self, batch_id: str) -> List[DPORecord]:
        """All-or-nothing: every task SUBMITTED or the commit is rejected.

        Delegates the two-phase write to the preference store, then marks
        the batch committed; re-committing a committed batch is a no-op
        that returns the same records."""
        with self._lock:
            batch = self._batches.get(batch_id)
            if batch is None:
                raise AnnotationError(f"unknown batch {batch_id!r}")
            if batch.state == BatchState.ABORTED:
                raise AnnotationError(f"batch {batch_id} was aborted")
            tasks = [self._tasks[tid] for tid in batch.task_ids]
            unsubmitted = [t.id for t in tasks if t.status != TaskStatus.SUBMITTED]
            if unsubmitted and batch.state != BatchState.COMMITTED:
                raise AnnotationError(
                    f"batch {batch_id} has unsubmitted tasks: {unsubmitted[:5]}"
                )
            by_pair: Dict[int, List[AnnotationTask]] = {}
            for task in tasks:
                by_pair.setdefault(task.pair_index, []).append(task)
            records = []
            now = self._clock()
            for pair_index in sorted(by_pair):
                resolved = self._resolve_pair(by_pair[pair_index])
                if resolved is None:
                    continue
                prompt, chosen_text, rejected_text, annotator = resolved
                lead = by_pair[pair_index][0]
                records.append(
                    DPORecord(
                        id=f"{batch_id}-p{pair_index:04d}",
                        prompt=prompt,
                        chosen=chosen_text,
                        rejected=rejected_text,
                        annotator=annotator,
                        created_at=now if batch.state != BatchState.COMMITTED else 0.0,
                        source=PreferenceSource.HUMAN,
                    )
                )
            if batch.state == BatchState.COMMITTED:
                # Idempotent replay path: records already durable.
                return [
                    r for r in self._dpo.records() if r.id.startswith(f"{batch_id}-p")
                ]
            # Phase 1+2 live in the preference store; the annotation-side
            # commit marker lands afterwards, so a crash in between replays to a
            # committed store and a re-commit here converges (no-op write).
            self._dpo.commit_batch(batch_id, records)
            for task in tasks:
                chosen_src = task.source_a if task.chosen == "A" else task.source_b
                rejected_src = task.source_b if task.chosen == "A" else task.source_a
                if chosen_src or rejected_src:
                    self._append(
                        {
                            "kind": "lineage",
                            "task_id": task.id,
                            "chosen_source": chosen_src,
                            "rejected_source": rejected_src,
                        }
                    )
            self._append({"kind": "commit", "batch_id": batch_id})
            return records

    def abort_batch(self, batch_id: str) -> None:
        with self._lock:
            batch = self._batches.get(batch_id)
            if batch is None:
                raise AnnotationError(f"unknown batch {batch_id!r}")
            if batch.state == BatchState.COMMITTED:
                raise AnnotationError(f"batch {batch_id} already committed")
            if batch.state != BatchState.ABORTED:
                self._append({"kind": "abort", "batch_id": batch_id})

    # -- inspection -------------------------------------------------------------

    def task_lineage(self, task_id: str) -> Tuple[Optional[str], Optional[str]]:
        """(chosen_source, rejected_source) experience ids, if recorded."""
        with self._lock:
            return self._lineage.get(task_id, (None, None))

    def get_task(self, task_id: str) -> AnnotationTask:
        with self._lock:
            if task_id not in self._tasks:
                raise AnnotationError(f"unknown task {task_id!r}")
            return self._tasks[task_id]

    def get_batch(self, batch_id: str) -> AnnotationBatch:
        with self._lock:
            if batch_id not in self._batches:
                raise AnnotationError(f"unknown batch {batch_id!r}")
            return self._batches[batch_id]

    def counts(self) -> Dict[str, int]:
        with self._lock:
            out = {status.value: 0 for status in TaskStatus}
            for task in self._tasks.values():
                out[task.status.value] += 1
            out["batches"] = len(self._batches)
            return out

    def close(self) -> None:
        self._log.close()
