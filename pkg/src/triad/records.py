"""Shared domain records: experiences, dataset rows, preference pairs."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional


class ExperienceState(str, enum.Enum):
    PENDING_REWARD = "PENDING_REWARD"
    READY = "READY"
    CONSUMED = "CONSUMED"  # derived view: READY with consumed_cnt > 0


class RecordError(ValueError):
    """Invalid record contents or state transition."""


@dataclass
class Experience:
    """One stored rollout trajectory with its delayed-reward lifecycle.

    ``state`` is persisted as PENDING_REWARD or READY; CONSUMED is a derived
    view (consumed_cnt > 0) so that experiences stay reusable across policy
    versions.
    """

    task_key: int
    tokens: List[int]
    prompt_length: int
    action_mask: List[bool]
    logprobs: List[float]
    reward: Optional[float]
    model_version: int
    state: ExperienceState = ExperienceState.READY
    sample_id: Optional[str] = None
    consumed_cnt: int = 0
    priority: float = 0.0
    info: Dict[str, float] = field(default_factory=dict)
    parent_id: Optional[str] = None

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.action_mask):
            raise RecordError("action_mask length must match tokens")
        n_true = sum(1 for m in self.action_mask if m)
        if len(self.logprobs) != n_true:
            raise RecordError("logprobs length must match mask-true count")
        if self.state == ExperienceState.READY and self.reward is None:
            raise RecordError("READY experience requires a reward")
        if self.state == ExperienceState.PENDING_REWARD and self.reward is not None:
            raise RecordError("PENDING_REWARD experience must not carry a reward")
        if self.consumed_cnt < 0:
            raise RecordError("consumed_cnt must be >= 0")

    @property
    def effective_state(self) -> ExperienceState:
        if self.state == ExperienceState.READY and self.consumed_cnt > 0:
            return ExperienceState.CONSUMED
        return self.state

    @property
    def total_logprob(self) -> float:
        """Rollout policy's total log-probability of the generated tokens."""
        return float(sum(self.logprobs))

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "task_key": self.task_key,
            "tokens": self.tokens,
            "prompt_length": self.prompt_length,
            "action_mask": [1 if m else 0 for m in self.action_mask],
            "logprobs": self.logprobs,
            "reward": self.reward,
            "state": self.state.value,
            "model_version": self.model_version,
            "consumed_cnt": self.consumed_cnt,
            "priority": self.priority,
            "info": self.info,
            "parent_id": self.parent_id,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Experience":
        return cls(
            sample_id=data["sample_id"],
            task_key=data["task_key"],
            tokens=list(data["tokens"]),
            prompt_length=data["prompt_length"],
            action_mask=[bool(m) for m in data["action_mask"]],
            logprobs=list(data["logprobs"]),
            reward=data["reward"],
            state=ExperienceState(data["state"]),
            model_version=data["model_version"],
            consumed_cnt=data["consumed_cnt"],
            priority=data["priority"],
            info=dict(data["info"]),
            parent_id=data["parent_id"],
        )


@dataclass
class TaskGroup:
    """The rollouts of one task that form the unit of loss computation."""

    task_key: int
    experiences: List[Experience]
    ref_logprobs: Optional[List[float]] = None

    def __post_init__(self) -> None:
        if not self.experiences:
            raise RecordError("a task group needs at least one experience")
        if any(e.task_key != self.task_key for e in self.experiences):
            raise RecordError("all experiences in a group must share the task key")
        if any(e.state != ExperienceState.READY for e in self.experiences):
            raise RecordError("all experiences in a group must be READY")
        if self.ref_logprobs is None:
            # Default reference: the rollout policy's own stored log-probs.
            self.ref_logprobs = [e.total_logprob for e in self.experiences]
        elif len(self.ref_logprobs) != len(self.experiences):
            raise RecordError("ref_logprobs length must match the group size")

    @property
    def size(self) -> int:
        return len(self.experiences)

    @property
    def rewards(self) -> List[float]:
        return [float(e.reward) for e in self.experiences]


@dataclass
class DatasetRecord:
    """One curated dataset row (prompt/response plus curation scores)."""

    id: int
    prompt: str
    response: str
    reward: float = 0.0
    consumed_cnt: int = 0
    quality_score: float = 0.0
    difficulty_score: float = 0.0
    diversity_score: float = 0.0
    priority: float = 0.0

    def __post_init__(self) -> None:
        for name in ("quality_score", "difficulty_score", "diversity_score"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise RecordError(f"{name} must be in [0, 1], got {value}")

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "consumed_cnt": self.consumed_cnt,
            "prompt": self.prompt,
            "response": self.response,
            "reward": self.reward,
            "quality_score": self.quality_score,
            "difficulty_score": self.difficulty_score,
            "diversity_score": self.diversity_score,
            "priority": self.priority,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "DatasetRecord":
        return cls(**data)


class PreferenceSource(str, enum.Enum):
    HUMAN = "HUMAN"
    MODEL = "MODEL"


@dataclass
class DPORecord:
    """One preference pair ready for DPO training."""

    id: str
    prompt: str
    chosen: str
    rejected: str
    annotator: str
    created_at: float
    source: PreferenceSource = PreferenceSource.HUMAN

    def __post_init__(self) -> None:
        if self.chosen == self.rejected:
            raise RecordError("chosen and rejected responses must differ")

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "annotator": self.annotator,
            "created_at": self.created_at,
            "source": self.source.value,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "DPORecord":
        data = dict(data)
        data["source"] = PreferenceSource(data["source"])
        return cls(**data)


@dataclass(frozen=True)
class UtilityWeights:
    """Weights for the utility score U = w_q*q + w_d*d + w_k*k - w_f*f."""

    w_q: float = 0.1
    w_d: float = 0.3
    w_k: float = 0.4
    w_f: float = 0.2

    def __post_init__(self) -> None:
        for name in ("w_q", "w_d", "w_k", "w_f"):
            if not math.isfinite(getattr(self, name)):
                raise RecordError(f"{name} must be finite")
