"""Experience buffer and record stores.

All stores are backed by append-only event logs (see storage.py) and keep
their working state in memory; replaying the log reconstructs identical
state after a restart. One lock per store makes put/mark_ready/sample_batch
atomic with respect to each other: many producers, one logical consumer,
plus read-only inspectors.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .records import (
    DatasetRecord,
    DPORecord,
    Experience,
    ExperienceState,
    RecordError,
    TaskGroup,
    UtilityWeights,
)
from .storage import JsonlLog


class StoreError(RuntimeError):
    """Invalid store operation."""


class UnknownSampleError(StoreError):
    pass


class DuplicateIdError(StoreError):
    pass


class LineageCycleError(StoreError):
    pass


class MarkReadyResult(str, enum.Enum):
    """Outcome codes for mark_ready; rejects leave the record unchanged."""

    OK = "ok"
    ALREADY_READY = "already_ready"
    ALREADY_CONSUMED = "already_consumed"


class SamplePolicy(str, enum.Enum):
    FIFO = "FIFO"
    PRIORITY = "PRIORITY"


@dataclass
class LineageEntry:
    sample_id: str
    parent_id: Optional[str]
    model_version: int


@dataclass
class BatchResult:
    """sample_batch output; ``short`` flags fewer items than requested."""

    experiences: List[Experience]
    groups: List[TaskGroup]
    requested: int
    short: bool


class ExperienceBuffer:
    """Durable experience store with the delayed-reward lifecycle.

    States: PENDING_REWARD -> READY (via mark_ready); CONSUMED is a derived
    view (consumed_cnt > 0) so records stay reusable. PENDING records are
    never returned by sample_batch.
    """

    def __init__(self, path: Union[str, Path], fsync: bool = False) -> None:
        self._lock = threading.RLock()
        self._log = JsonlLog(path, fsync=fsync)
        self._records: Dict[str, Experience] = {}
        self._seq: Dict[str, int] = {}  # insertion order for FIFO
        self._skips: List[dict] = []
        self._lineage: Dict[str, LineageEntry] = {}
        self._next_auto_id = 1
        for event in JsonlLog.replay(self._log.path):
            self._apply(event)

    # -- event application (shared by live writes and replay) --------------

    def _apply(self, event: dict) -> None:
        kind = event["kind"]
        if kind == "exp":
            payload = {k: v for k, v in event.items() if k != "kind"}
            exp = Experience.from_json_dict(payload)
            self._seq[exp.sample_id] = len(self._seq)
            self._records[exp.sample_id] = exp
            self._bump_auto_id(exp.sample_id)
        elif kind == "ready":
            exp = self._records[event["sample_id"]]
            exp.reward = event["reward"]
            exp.state = ExperienceState.READY
        elif kind == "consume":
            for sample_id in event["sample_ids"]:
                self._records[sample_id].consumed_cnt += 1
        elif kind == "skip":
            self._skips.append(
                {"task_key": event["task_key"], "reason": event["reason"]}
            )
        elif kind == "lineage":
            self._lineage[event["child"]] = LineageEntry(
                sample_id=event["child"],
                parent_id=event["parent"],
                model_version=event["model_version"],
            )
        else:
            raise StoreError(f"unknown buffer event kind: {kind!r}")

    def _bump_auto_id(self, sample_id: str) -> None:
        if sample_id.startswith("s") and sample_id[1:].isdigit():
            self._next_auto_id = max(self._next_auto_id, int(sample_id[1:]) + 1)

    def refresh(self) -> None:
        """Rebuild state from the log, picking up other processes' appends."""
        with self._lock:
            self._records.clear()
            self._seq.clear()
            self._skips.clear()
            self._lineage.clear()
            self._next_auto_id = 1
            for event in JsonlLog.replay(self._log.path):
                self._apply(event)

    # -- producer side ------------------------------------------------------

    def put(self, exp: Experience) -> str:
        """Durably append one experience; returns its sample id."""
        with self._lock:
            if exp.sample_id is None:
                exp.sample_id = f"s{self._next_auto_id:08d}"
            if exp.sample_id in self._records:
                raise DuplicateIdError(f"duplicate sample_id {exp.sample_id!r}")
            event = {"kind": "exp", **exp.to_json_dict()}
            self._log.append(event)
            self._apply(event)
            return exp.sample_id

    def mark_ready(self, sample_id: str, reward: float) -> MarkReadyResult:
        """PENDING_REWARD -> READY, atomically with the reward write."""
        with self._lock:
            exp = self._records.get(sample_id)
            if exp is None:
                raise UnknownSampleError(f"unknown sample_id {sample_id!r}")
            if exp.state == ExperienceState.READY:
                if exp.consumed_cnt > 0:
                    return MarkReadyResult.ALREADY_CONSUMED
                return MarkReadyResult.ALREADY_READY
            event = {"kind": "ready", "sample_id": sample_id, "reward": float(reward)}
            self._log.append(event)
            self._apply(event)
            return MarkReadyResult.OK

    def record_skip(self, task_key: int, reason: str) -> None:
        with self._lock:
            event = {"kind": "skip", "task_key": task_key, "reason": reason}
            self._log.append(event)
            self._apply(event)

    # -- consumer side ------------------------------------------------------

    def _ready_ids(self) -> List[str]:
        # Effective READY only: consumed records stay durable (and count
        # toward frequency scores) but are not re-served to the trainer.
        return [
            sid
            for sid, exp in self._records.items()
            if exp.effective_state == ExperienceState.READY
        ]

    def ready_count(self) -> int:
        with self._lock:
            return len(self._ready_ids())

    def ready_group_count(self, group_size: int) -> int:
        """Complete unconsumed groups currently available (non-consuming)."""
        if group_size < 1:
            raise StoreError("group_size must be >= 1")
        with self._lock:
            per_task: Dict[int, int] = {}
            for sid in self._ready_ids():
                key = self._records[sid].task_key
                per_task[key] = per_task.get(key, 0) + 1
            return sum(count // group_size for count in per_task.values())

    def _order_ids(self, ids: List[str], policy: SamplePolicy) -> List[str]:
        if policy == SamplePolicy.FIFO:
            return sorted(ids, key=lambda sid: self._seq[sid])
        # PRIORITY: descending priority, ties broken by lower sample_id.
        return sorted(ids, key=lambda sid: (-self._records[sid].priority, sid))

    def _consume(self, ids: Sequence[str]) -> None:
        event = {"kind": "consume", "sample_ids": list(ids)}
        self._log.append(event)
        self._apply(event)

    def _copy(self, sample_id: str) -> Experience:
        return Experience.from_json_dict(self._records[sample_id].to_json_dict())

    def sample_batch(
        self,
        n: int,
        policy: Union[SamplePolicy, str] = SamplePolicy.FIFO,
        group_by_task: bool = False,
        group_size: Optional[int] = None,
    ) -> BatchResult:
        """Consume up to ``n`` READY experiences (or task groups).

        With group_by_task, ``n`` counts groups and each group holds exactly
        ``group_size`` experiences sharing one task_key; incomplete leftovers
        are neither returned nor consumed. Never blocks: a short buffer
        returns what exists with the short flag set.
        """
        if n < 1:
            raise StoreError("batch size must be >= 1")
        policy = SamplePolicy(policy)
        with self._lock:
            ordered = self._order_ids(self._ready_ids(), policy)
            if not group_by_task:
                take = ordered[:n]
                self._consume(take)
                exps = [self._copy(sid) for sid in take]
                return BatchResult(exps, [], requested=n, short=len(take) < n)

            if group_size is None or group_size < 1:
                raise StoreError("group_by_task requires group_size >= 1")
            per_task: Dict[int, List[str]] = {}
            for sid in ordered:
                per_task.setdefault(self._records[sid].task_key, []).append(sid)
            chunks: List[List[str]] = []
            for ids in per_task.values():
                for i in range(0, len(ids) - group_size + 1, group_size):
                    chunks.append(ids[i : i + group_size])
            # Order complete groups by their lead element, same comparator
            # as the flat path, so selection stays deterministic.
            if policy == SamplePolicy.FIFO:
                chunks.sort(key=lambda c: self._seq[c[0]])
            else:
                chunks.sort(key=lambda c: (-self._records[c[0]].priority, c[0]))
            take_chunks = chunks[:n]
            flat = [sid for chunk in take_chunks for sid in chunk]
            self._consume(flat)
            groups = [
                TaskGroup(
                    task_key=self._records[chunk[0]].task_key,
                    experiences=[self._copy(sid) for sid in chunk],
                )
                for chunk in take_chunks
            ]
            return BatchResult(
                [], groups, requested=n, short=len(take_chunks) < n
            )

    # -- lineage --------------------------------------------------------------

    def record_lineage(
        self, child_id: str, parent_id: Optional[str], model_version: int
    ) -> None:
        """Attach a provenance edge child -> parent; cycles are rejected."""
        with self._lock:
            if child_id not in self._records:
                raise UnknownSampleError(f"unknown sample_id {child_id!r}")
            seen = {child_id}
            cursor = parent_id
            while cursor is not None:
                if cursor in seen:
                    raise LineageCycleError(
                        f"lineage edge {child_id!r} -> {parent_id!r} creates a cycle"
                    )
                seen.add(cursor)
                entry = self._lineage.get(cursor)
                if entry is None:
                    rec = self._records.get(cursor)
                    cursor = rec.parent_id if rec is not None else None
                else:
                    cursor = entry.parent_id
            event = {
                "kind": "lineage",
                "child": child_id,
                "parent": parent_id,
                "model_version": model_version,
            }
            self._log.append(event)
            self._apply(event)

    def _lineage_entry(self, sample_id: str) -> LineageEntry:
        entry = self._lineage.get(sample_id)
        if entry is not None:
            return entry
        rec = self._records.get(sample_id)
        if rec is None:
            raise UnknownSampleError(f"unknown sample_id {sample_id!r}")
        return LineageEntry(sample_id, rec.parent_id, rec.model_version)

    def query_lineage(self, sample_id: str) -> List[LineageEntry]:
        """Full ancestor chain [self, parent, ..., root]."""
        with self._lock:
            chain: List[LineageEntry] = []
            seen = set()
            cursor: Optional[str] = sample_id
            while cursor is not None:
                if cursor in seen:
                    raise LineageCycleError(f"cycle reached from {sample_id!r}")
                seen.add(cursor)
                entry = self._lineage_entry(cursor)
                chain.append(entry)
                cursor = entry.parent_id
            return chain

    # -- inspection -----------------------------------------------------------

    def get(self, sample_id: str) -> Experience:
        with self._lock:
            if sample_id not in self._records:
                raise UnknownSampleError(f"unknown sample_id {sample_id!r}")
            return self._copy(sample_id)

    def size(self) -> int:
        with self._lock:
            return len(self._records)

    def stats(self) -> Dict[str, int]:
        """Counts by effective state plus skip/consumption tallies."""
        with self._lock:
            pending = ready = consumed = 0
            consumptions = 0
            tasks = set()
            for exp in self._records.values():
                tasks.add(exp.task_key)
                consumptions += exp.consumed_cnt
                eff = exp.effective_state
                if eff == ExperienceState.PENDING_REWARD:
                    pending += 1
                elif eff == ExperienceState.READY:
                    ready += 1
                else:
                    consumed += 1
            max_consumed = max(
                (e.consumed_cnt for e in self._records.values()), default=0
            )
            return {
                "total": len(self._records),
                "pending": pending,
                "ready": ready,
                "consumed": consumed,
                "skips": len(self._skips),
                "tasks": len(tasks),
                "consumptions": consumptions,
                "max_consumed_cnt": max_consumed,
            }

    def task_stats(self) -> Dict[int, Dict[str, int]]:
        with self._lock:
            out: Dict[int, Dict[str, int]] = {}
            for exp in self._records.values():
                row = out.setdefault(
                    exp.task_key,
                    {"total": 0, "pending": 0, "ready": 0, "consumed": 0, "skips": 0},
                )
                row["total"] += 1
                eff = exp.effective_state
                if eff == ExperienceState.PENDING_REWARD:
                    row["pending"] += 1
                elif eff == ExperienceState.READY:
                    row["ready"] += 1
                else:
                    row["consumed"] += 1
            for skip in self._skips:
                row = out.setdefault(
                    skip["task_key"],
                    {"total": 0, "pending": 0, "ready": 0, "consumed": 0, "skips": 0},
                )
                row["skips"] += 1
            return out

    def close(self) -> None:
        self._log.close()


class DatasetStore:
    """Curated dataset rows plus the selection audit trail."""

    def __init__(self, path: Union[str, Path], fsync: bool = False) -> None:
        self._lock = threading.RLock()
        self._log = JsonlLog(path, fsync=fsync)
        self._records: Dict[int, DatasetRecord] = {}
        self._order: List[int] = []
        for event in JsonlLog.replay(self._log.path):
            self._apply(event)

    def _apply(self, event: dict) -> None:
        kind = event["kind"]
        if kind == "rec":
            payload = {k: v for k, v in event.items() if k != "kind"}
            rec = DatasetRecord.from_json_dict(payload)
            self._records[rec.id] = rec
            self._order.append(rec.id)
        elif kind == "priority":
            self._records[event["id"]].priority = event["priority"]
        elif kind == "consume":
            for rid in event["ids"]:
                self._records[rid].consumed_cnt += 1
        elif kind == "select":
            pass  # audit-only provenance event
        else:
            raise StoreError(f"unknown dataset event kind: {kind!r}")

    def add(self, rec: DatasetRecord) -> int:
        with self._lock:
            if rec.id in self._records:
                raise DuplicateIdError(f"duplicate dataset id {rec.id!r}")
            event = {"kind": "rec", **rec.to_json_dict()}
            self._log.append(event)
            self._apply(event)
            return rec.id

    def get(self, rid: int) -> DatasetRecord:
        with self._lock:
            if rid not in self._records:
                raise UnknownSampleError(f"unknown dataset id {rid!r}")
            return DatasetRecord.from_json_dict(self._records[rid].to_json_dict())

    def records(self) -> List[DatasetRecord]:
        with self._lock:
            return [self.get(rid) for rid in self._order]

    def update_priority(self, rid: int, priority: float) -> None:
        with self._lock:
            if rid not in self._records:
                raise UnknownSampleError(f"unknown dataset id {rid!r}")
            event = {"kind": "priority", "id": rid, "priority": float(priority)}
            self._log.append(event)
            self._apply(event)

    def mark_consumed(self, ids: Sequence[int]) -> None:
        with self._lock:
            missing = [rid for rid in ids if rid not in self._records]
            if missing:
                raise UnknownSampleError(f"unknown dataset ids {missing!r}")
            event = {"kind": "consume", "ids": list(ids)}
            self._log.append(event)
            self._apply(event)

    def record_selection(self, rid: int, utility: float, meta: dict) -> None:
        with self._lock:
            event = {"kind": "select", "id": rid, "utility": utility, **meta}
            self._log.append(event)
            self._apply(event)

    def refresh(self) -> None:
        with self._lock:
            self._records.clear()
            self._order.clear()
            for event in JsonlLog.replay(self._log.path):
                self._apply(event)

    def size(self) -> int:
        with self._lock:
            return len(self._records)

    def max_consumed(self) -> int:
        with self._lock:
            return max((r.consumed_cnt for r in self._records.values()), default=0)

    def close(self) -> None:
        self._log.close()


def compute_utility(
    rec: Union[DatasetRecord, Experience],
    weights: UtilityWeights,
    max_consumed: int,
) -> float:
    """U = w_q*q + w_d*d + w_k*k - w_f*f.

    f is the record's consumed_cnt normalized by max(1, max_consumed) so it
    stays bounded alongside the [0,1] scores.
    """
    if isinstance(rec, DatasetRecord):
        q, d, k = rec.quality_score, rec.diversity_score, rec.difficulty_score
    else:
        try:
            q = rec.info["quality_score"]
            d = rec.info["diversity_score"]
            k = rec.info["difficulty_score"]
        except KeyError as exc:
            raise RecordError(f"experience missing score {exc.args[0]!r}") from exc
    f = rec.consumed_cnt / max(1, max_consumed)
    return weights.w_q * q + weights.w_d * d + weights.w_k * k - weights.w_f * f


def active_select(
    store: DatasetStore,
    weights: UtilityWeights,
    theta_min: float,
    k: int,
) -> List[DatasetRecord]:
    """Select the Top-K records whose utility strictly exceeds theta_min.

    Scores every record, keeps U > theta_min (strict), takes the K highest
    (ties broken by lower id), writes each winner's utility back as its
    priority, and records one provenance event per selection. Deterministic
    in (store contents, weights, theta_min, k).
    """
    if k < 0:
        raise StoreError("k must be >= 0")
    with store._lock:
        recs = store.records()
        max_c = store.max_consumed()
        scored: List[Tuple[float, DatasetRecord]] = [
            (compute_utility(r, weights, max_c), r) for r in recs
        ]
        passed = [(u, r) for u, r in scored if u > theta_min]
        passed.sort(key=lambda ur: (-ur[0], ur[1].id))
        chosen = passed[:k]
        out: List[DatasetRecord] = []
        for u, r in chosen:
            store.update_priority(r.id, u)
            store.record_selection(
                r.id, u, {"theta_min": theta_min, "k": k, "consumed_cnt": r.consumed_cnt}
            )
            out.append(store.get(r.id))
        return out


class DPOStore:
    """Preference-pair store with two-phase (all-or-nothing) batch commits.

    Records become visible only once their batch's commit marker is durable;
    a crash between the phases leaves the batch invisible after replay.
    Committing the same batch_id twice is a no-op.
    """

    def __init__(self, path: Union[str, Path], fsync: bool = False) -> None:
        self._lock = threading.RLock()
        self._log = JsonlLog(path, fsync=fsync)
        self._staged: Dict[str, List[DPORecord]] = {}
        self._committed: Dict[str, List[DPORecord]] = {}
        self._commit_order: List[str] = []
        for event in JsonlLog.replay(self._log.path):
            self._apply(event)

    def _apply(self, event: dict) -> None:
        kind = event["kind"]
        if kind == "rec":
            payload = {k: v for k, v in event.items() if k not in ("kind", "batch_id")}
            rec = DPORecord.from_json_dict(payload)
            staged = self._staged.setdefault(event["batch_id"], [])
            for i, existing in enumerate(staged):
                if existing.id == rec.id:
                    # A retried batch write supersedes its crashed first try.
                    staged[i] = rec
                    break
            else:
                staged.append(rec)
        elif kind == "commit":
            batch_id = event["batch_id"]
            self._committed[batch_id] = self._staged.pop(batch_id, [])
            self._commit_order.append(batch_id)
        else:
            raise StoreError(f"unknown preference event kind: {kind!r}")

    def commit_batch(self, batch_id: str, records: Sequence[DPORecord]) -> int:
        """Durably commit a batch; returns the number of records written."""
        with self._lock:
            if batch_id in self._committed:
                return 0  # idempotent re-commit
            existing = {r.id for recs in self._committed.values() for r in recs}
            for rec in records:
                if rec.id in existing:
                    raise DuplicateIdError(f"duplicate preference id {rec.id!r}")
                existing.add(rec.id)
            for rec in records:
                self._log.append(
                    {"kind": "rec", "batch_id": batch_id, **rec.to_json_dict()}
                )
            commit = {"kind": "commit", "batch_id": batch_id}
            self._log.append(commit)
            self._staged[batch_id] = [
                DPORecord.from_json_dict(r.to_json_dict()) for r in records
            ]
            self._apply(commit)
            return len(records)

    def add(self, rec: DPORecord) -> None:
        self.commit_batch(f"single-{rec.id}", [rec])

    def records(self) -> List[DPORecord]:
        with self._lock:
            out: List[DPORecord] = []
            for batch_id in self._commit_order:
                out.extend(
                    DPORecord.from_json_dict(r.to_json_dict())
                    for r in self._committed[batch_id]
                )
            return out

    def refresh(self) -> None:
        with self._lock:
            self._staged.clear()
            self._committed.clear()
            self._commit_order.clear()
            for event in JsonlLog.replay(self._log.path):
                self._apply(event)

    def is_committed(self, batch_id: str) -> bool:
        with self._lock:
            return batch_id in self._committed

    def size(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._committed.values())

    def close(self) -> None:
        self._log.close()
