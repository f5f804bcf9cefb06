"""Dataset plumbing: raw records -> tasksets, scoring, hierarchical
cleaning, and utility-driven batch selection.

The cleaning pipeline applies its four stages in a fixed order —
quality, difficulty, diversity, quantity — and reports per-stage attrition.
All scores live in [0, 1] and every transform is deterministic given its
config and inputs.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .buffer import DatasetStore, ExperienceBuffer, active_select
from .records import DatasetRecord, UtilityWeights
from .storage import JsonlLog
from .workflows import RolloutArgs, Task, make_task


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class FormatConfig:
    prompt_key: str = "question"
    response_key: str = "answer"


@dataclass(frozen=True)
class ScorerConfig:
    # quality: full score inside the word-count window, linear falloff outside
    min_len: int = 1
    max_len: int = 64

    def __post_init__(self) -> None:
        if self.min_len < 1 or self.max_len < self.min_len:
            raise DataError("need 1 <= min_len <= max_len")


@dataclass(frozen=True)
class CleanConfig:
    q_min: float = 0.0
    k_lo: float = 0.0
    k_hi: float = 1.0
    diversity_budget: Optional[int] = None
    quantity: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.k_lo <= self.k_hi <= 1.0:
            raise DataError("need 0 <= k_lo <= k_hi <= 1")


@dataclass(frozen=True)
class DataConfig:
    dataset_path: str = ""
    format_config: FormatConfig = field(default_factory=FormatConfig)
    scorer_config: ScorerConfig = field(default_factory=ScorerConfig)
    clean_config: CleanConfig = field(default_factory=CleanConfig)
    utility_weights: UtilityWeights = field(default_factory=UtilityWeights)
    theta_min: float = 0.0
    top_k: int = 10


@dataclass
class RawDataset:
    records: List[Dict[str, str]]
    source: str = ""


def load_raw_dataset(path: Union[str, Path]) -> RawDataset:
    records = [dict(row) for row in JsonlLog.replay(path)]
    return RawDataset(records=records, source=str(path))


def save_tasks(path: Union[str, Path], tasks: Sequence[Task]) -> None:
    log = JsonlLog(path)
    try:
        for task in tasks:
            log.append(task.to_json_dict())
    finally:
        log.close()


def load_tasks(path: Union[str, Path]) -> List[Task]:
    return [Task.from_json_dict(row) for row in JsonlLog.replay(path)]


def format_to_taskset(
    raw: RawDataset,
    config: DataConfig,
    reward_fn_name: str = "exact_match",
    workflow_name: str = "example_workflow",
    rollout_args: Optional[RolloutArgs] = None,
) -> List[Task]:
    """Map every raw record to a Task; order preserved; all-or-nothing."""
    if not raw.records:
        raise DataError("raw dataset is empty")
    fmt = config.format_config
    tasks = []
    for idx, rec in enumerate(raw.records):
        missing = [k for k in (fmt.prompt_key, fmt.response_key) if k not in rec]
        if missing:
            raise DataError(f"record {idx} is missing keys {missing}")
        tasks.append(
            make_task(
                raw={
                    "question": rec[fmt.prompt_key],
                    "answer": rec[fmt.response_key],
                    "reward_fn": reward_fn_name,
                },
                workflow_name=workflow_name,
                rollout_args=rollout_args,
            )
        )
    return tasks


# -- scoring -------------------------------------------------------------------


def _word_count(rec: DatasetRecord) -> int:
    return len(rec.prompt.split()) + len(rec.response.split())


def _quality(rec: DatasetRecord, cfg: ScorerConfig, seen_before: bool) -> float:
    if seen_before:
        return 0.0
    n = _word_count(rec)
    if n < cfg.min_len:
        return n / cfg.min_len
    if n > cfg.max_len:
        return max(0.0, 1.0 - (n - cfg.max_len) / cfg.max_len)
    return 1.0


def _unigram_entropy(words: Sequence[str]) -> float:
    if not words:
        return 0.0
    counts = Counter(words)
    total = len(words)
    return -sum((c / total) * math.log(c / total) for c in counts.values())


def score(
    records: Sequence[DatasetRecord],
    scorer_config: ScorerConfig = ScorerConfig(),
    success_rates: Optional[Dict[str, float]] = None,
) -> List[DatasetRecord]:
    """Return copies carrying quality/difficulty/diversity scores in [0,1].

    Difficulty is 1 - the policy's historical success rate on the prompt
    (0.5 with no history); diversity is prompt unigram entropy normalized by
    the corpus maximum; quality is the length-window score with exact
    duplicates of an earlier record zeroed.
    """
    if not records:
        raise DataError("cannot score an empty record list")
    success_rates = success_rates or {}
    entropies = [_unigram_entropy(r.prompt.split()) for r in records]
    max_h = max(entropies)
    seen: set = set()
    out = []
    for rec, h in zip(records, entropies):
        key = (rec.prompt, rec.response)
        quality = _quality(rec, scorer_config, key in seen)
        seen.add(key)
        rate = success_rates.get(rec.prompt)
        difficulty = 0.5 if rate is None else 1.0 - min(max(rate, 0.0), 1.0)
        diversity = h / max_h if max_h > 0 else 0.0
        copy = DatasetRecord.from_json_dict(rec.to_json_dict())
        copy.quality_score = min(max(quality, 0.0), 1.0)
        copy.difficulty_score = min(max(difficulty, 0.0), 1.0)
        copy.diversity_score = min(max(diversity, 0.0), 1.0)
        out.append(copy)
    return out


def buffer_success_rates(
    buffer: ExperienceBuffer, tasks: Sequence[Task]
) -> Dict[str, float]:
    """prompt -> mean reward over the task's READY/consumed experiences."""
    by_key: Dict[int, List[float]] = {}
    for sid in list(buffer._records):
        exp = buffer.get(sid)
        if exp.reward is not None:
            by_key.setdefault(exp.task_key, []).append(exp.reward)
    rates = {}
    for task in tasks:
        rewards = by_key.get(task.task_key)
        if rewards:
            rates[task.raw["question"]] = sum(rewards) / len(rewards)
    return rates


# -- hierarchical cleaning ----------------------------------------------------


@dataclass
class CleanReport:
    records: List[DatasetRecord]
    attrition: Dict[str, int]


def _greedy_diversity(
    records: List[DatasetRecord], budget: int
) -> List[DatasetRecord]:
    """Pick records by maximal marginal unigram-entropy gain, then restore
    input order (stages are order-stable)."""
    chosen_idx: List[int] = []
    counts: Counter = Counter()
    total = 0
    remaining = list(range(len(records)))
    base_h = 0.0
    while remaining and len(chosen_idx) < budget:
        best_idx = None
        best_gain = -math.inf
        for idx in remaining:
            words = records[idx].prompt.split()
            trial = counts.copy()
            trial.update(words)
            trial_total = total + len(words)
            trial_h = (
                -sum((c / trial_total) * math.log(c / trial_total) for c in trial.values())
                if trial_total
                else 0.0
            )
            gain = trial_h - base_h
            if gain > best_gain:  # strict: ties resolve to the earlier record
                best_gain = gain
                best_idx = idx
        words = records[best_idx].prompt.split()
        counts.update(words)
        total += len(words)
        base_h += best_gain
        chosen_idx.append(best_idx)
        remaining.remove(best_idx)
    return [records[i] for i in sorted(chosen_idx)]


def clean_hierarchy(
    records: Sequence[DatasetRecord], config: CleanConfig
) -> CleanReport:
    """Quality -> Difficulty -> Diversity -> Quantity, in that fixed order."""
    stage = list(records)
    attrition: Dict[str, int] = {}

    kept = [r for r in stage if r.quality_score >= config.q_min]
    attrition["quality"] = len(stage) - len(kept)
    stage = kept

    kept = [r for r in stage if config.k_lo <= r.difficulty_score <= config.k_hi]
    attrition["difficulty"] = len(stage) - len(kept)
    stage = kept

    if config.diversity_budget is not None and len(stage) > config.diversity_budget:
        kept = _greedy_diversity(stage, config.diversity_budget)
    else:
        kept = stage
    attrition["diversity"] = len(stage) - len(kept)
    stage = kept

    if config.quantity is not None and len(stage) > config.quantity:
        kept = stage[: config.quantity]
    else:
        kept = stage
    attrition["quantity"] = len(stage) - len(kept)

    return CleanReport(records=kept, attrition=attrition)


def data_active_iterate(
    store: DatasetStore, config: DataConfig
) -> List[DatasetRecord]:
    """One selection epoch: pick by utility, then update the reuse cache.

    Selected records' consumed_cnt rises, so their frequency penalty grows
    and heavily reused data decays out of future selections.
    """
    selected = active_select(
        store, config.utility_weights, config.theta_min, config.top_k
    )
    if selected:
        store.mark_consumed([r.id for r in selected])
    return [store.get(r.id) for r in selected]


def store_from_records(
    path: Union[str, Path], records: Sequence[DatasetRecord]
) -> DatasetStore:
    store = DatasetStore(path)
    for rec in records:
        store.add(rec)
    return store


def export_taskset(
    records: Sequence[DatasetRecord],
    config: DataConfig,
    reward_fn_name: str = "exact_match",
    workflow_name: str = "example_workflow",
) -> List[Task]:
    raw = RawDataset(
        records=[
            {
                config.format_config.prompt_key: r.prompt,
                config.format_config.response_key: r.response,
            }
            for r in records
        ]
    )
    return format_to_taskset(raw, config, reward_fn_name, workflow_name)


def dump_records(path: Union[str, Path], records: Sequence[DatasetRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), separators=(",", ":")) + "\n")
