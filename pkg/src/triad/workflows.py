"""Rollout workflows: tasks in, experiences out.

A workflow turns one Task into K experiences using a policy snapshot and an
rng. Multi-turn conversations are flattened into a single token sequence
with reserved role-marker tokens; the action mask is true exactly on
assistant-generated tokens, so user/system/marker rows never receive
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Type

import numpy as np

from . import policy as policy_mod
from .encoding import decode_tokens, encode_text, sequence_key, text_key
from .environments import (
    DelayedRewardEnv,
    Environment,
    FlakyEnv,
    GridworldEnv,
    StringMatchEnv,
)
from .policy import PolicyParams
from .records import Experience, ExperienceState


class WorkflowError(ValueError):
    """Bad task spec or workflow contract violation."""


# Reserved role-delimiter token ids, outside the generative vocabulary
# (which is [0, V)). They are always mask-false.
ROLE_TOKENS: Dict[str, int] = {"system": -2, "user": -3, "assistant": -4}


@dataclass(frozen=True)
class RolloutArgs:
    repeat_times: int = 1
    temperature: float = 1.0
    max_new_tokens: int = 4

    def __post_init__(self) -> None:
        if self.repeat_times < 1:
            raise WorkflowError("repeat_times must be >= 1")
        if self.temperature < 0:
            raise WorkflowError("temperature must be >= 0")
        if self.max_new_tokens < 1:
            raise WorkflowError("max_new_tokens must be >= 1")


@dataclass
class Task:
    task_key: int
    raw: Dict[str, str]
    workflow_name: str
    rollout_args: RolloutArgs = field(default_factory=RolloutArgs)
    is_eval: bool = False

    def to_json_dict(self) -> dict:
        return {
            "task_key": self.task_key,
            "raw": self.raw,
            "workflow_name": self.workflow_name,
            "rollout_args": {
                "repeat_times": self.rollout_args.repeat_times,
                "temperature": self.rollout_args.temperature,
                "max_new_tokens": self.rollout_args.max_new_tokens,
            },
            "is_eval": self.is_eval,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Task":
        return cls(
            task_key=data["task_key"],
            raw=dict(data["raw"]),
            workflow_name=data["workflow_name"],
            rollout_args=RolloutArgs(**data["rollout_args"]),
            is_eval=data.get("is_eval", False),
        )


def make_task(
    raw: Dict[str, str],
    workflow_name: str,
    rollout_args: Optional[RolloutArgs] = None,
    is_eval: bool = False,
) -> Task:
    """Task with its key derived from the raw payload (stable across runs)."""
    digest = "\x1f".join(f"{k}={raw[k]}" for k in sorted(raw))
    return Task(
        task_key=text_key(digest),
        raw=dict(raw),
        workflow_name=workflow_name,
        rollout_args=rollout_args or RolloutArgs(),
        is_eval=is_eval,
    )


@dataclass
class Message:
    role: str
    tokens: List[int]
    logprobs: Optional[List[float]] = None  # assistant turns only


@dataclass
class DeferredReward:
    reward: float
    delay_ticks: int


@dataclass
class WorkflowOutput:
    """Experiences plus, per experience, an optional withheld reward."""

    experiences: List[Experience]
    deferred: List[Optional[DeferredReward]]

    def __post_init__(self) -> None:
        if len(self.experiences) != len(self.deferred):
            raise WorkflowError("deferred list must parallel experiences")


def concat_to_experience(
    messages: Sequence[Message],
    final_reward: Optional[float],
    info: Dict[str, float],
    task_key: int,
    model_version: int,
) -> Experience:
    """Flatten a conversation into one maskable token sequence.

    Each turn contributes its role-marker token followed by its content.
    prompt_length is the index of the first assistant content token, so the
    stored prompt covers everything up to and including the first assistant
    marker.
    """
    if not messages:
        raise WorkflowError("conversation must be nonempty")
    tokens: List[int] = []
    mask: List[bool] = []
    logprobs: List[float] = []
    prompt_length: Optional[int] = None
    for msg in messages:
        if msg.role not in ROLE_TOKENS:
            raise WorkflowError(f"unknown role {msg.role!r}")
        tokens.append(ROLE_TOKENS[msg.role])
        mask.append(False)
        if msg.role == "assistant":
            if not msg.tokens:
                raise WorkflowError("assistant turns must contain tokens")
            if msg.logprobs is None or len(msg.logprobs) != len(msg.tokens):
                raise WorkflowError("assistant turns need matching logprobs")
            if prompt_length is None:
                prompt_length = len(tokens)
            tokens.extend(msg.tokens)
            mask.extend([True] * len(msg.tokens))
            logprobs.extend(msg.logprobs)
        else:
            tokens.extend(msg.tokens)
            mask.extend([False] * len(msg.tokens))
    if prompt_length is None:
        raise WorkflowError("conversation has no assistant turn")
    state = (
        ExperienceState.READY
        if final_reward is not None
        else ExperienceState.PENDING_REWARD
    )
    return Experience(
        task_key=task_key,
        tokens=tokens,
        prompt_length=prompt_length,
        action_mask=mask,
        logprobs=logprobs,
        reward=final_reward,
        model_version=model_version,
        state=state,
        info=dict(info),
    )


# -- reward functions ---------------------------------------------------------

RewardFn = Callable[[List[int], List[int], policy_mod.Vocabulary], float]
REWARD_FNS: Dict[str, RewardFn] = {}


def register_reward_fn(name: str) -> Callable[[RewardFn], RewardFn]:
    def deco(fn: RewardFn) -> RewardFn:
        REWARD_FNS[name] = fn
        return fn

    return deco


@register_reward_fn("exact_match")
def exact_match(
    generated: List[int], truth: List[int], vocab: policy_mod.Vocabulary
) -> float:
    """1.0 iff the generated tokens (sans terminator) equal the truth."""
    body = list(generated)
    if body and body[-1] == vocab.eos_token:
        body = body[:-1]
    return 1.0 if body == list(truth) else 0.0


@register_reward_fn("scaled_first_token")
def scaled_first_token(
    generated: List[int], truth: List[int], vocab: policy_mod.Vocabulary
) -> float:
    """Bandit-style reward: first token id scaled into [0, 1]."""
    if not generated or vocab.size < 2:
        return 0.0
    return generated[0] / (vocab.size - 1)


# -- workflows ----------------------------------------------------------------


class Workflow:
    """Contract: run() maps one task to a WorkflowOutput."""

    name = "workflow"
    required_keys: Sequence[str] = ()

    def check_raw(self, task: Task) -> None:
        missing = [k for k in self.required_keys if k not in task.raw]
        if missing:
            raise WorkflowError(f"{self.name} task missing raw keys {missing}")

    def run(
        self, task: Task, params: PolicyParams, rng: np.random.Generator
    ) -> WorkflowOutput:
        raise NotImplementedError


WORKFLOWS: Dict[str, Type[Workflow]] = {}


def register_workflow(cls: Type[Workflow]) -> Type[Workflow]:
    WORKFLOWS[cls.name] = cls
    return cls


def run_workflow(
    task: Task, params: PolicyParams, rng: np.random.Generator
) -> WorkflowOutput:
    if task.workflow_name not in WORKFLOWS:
        raise WorkflowError(f"workflow {task.workflow_name!r} is not registered")
    return WORKFLOWS[task.workflow_name]().run(task, params, rng)


def run_single_turn(
    task: Task, params: PolicyParams, rng: np.random.Generator
) -> WorkflowOutput:
    """K independent one-shot responses, rewarded against the truth answer."""
    raw = task.raw
    if "question" not in raw or "answer" not in raw:
        raise WorkflowError("single-turn task needs raw question and answer")
    vocab = params.vocab
    reward_fn = REWARD_FNS[raw.get("reward_fn", "exact_match")]
    q_tokens = encode_text(raw["question"], vocab.size)
    truth = encode_text(raw["answer"], vocab.size)
    prefix = [ROLE_TOKENS["user"]] + q_tokens + [ROLE_TOKENS["assistant"]]
    context_key = sequence_key(prefix)
    args = task.rollout_args
    experiences = []
    for _ in range(args.repeat_times):
        gen, lps = policy_mod.sample_span(
            params,
            context_key,
            len(prefix),
            args.temperature,
            args.max_new_tokens,
            rng,
        )
        reward = reward_fn(gen, truth, vocab)
        experiences.append(
            concat_to_experience(
                [
                    Message("user", q_tokens),
                    Message("assistant", gen, lps),
                ],
                final_reward=reward,
                info={},
                task_key=task.task_key,
                model_version=params.version,
            )
        )
    return WorkflowOutput(experiences, [None] * len(experiences))


def run_multi_turn(
    task: Task,
    params: PolicyParams,
    env: Environment,
    max_env_steps: int,
    rng: np.random.Generator,
) -> WorkflowOutput:
    """K episodes against one environment, flattened to masked sequences.

    Default final reward is -0.1 (episode never finished); a finishing step's
    reward replaces it. Environments that defer their final reward yield
    PENDING_REWARD experiences plus the withheld value for later delivery.
    """
    if max_env_steps < 1:
        raise WorkflowError("max_env_steps must be >= 1")
    vocab = params.vocab
    args = task.rollout_args
    experiences: List[Experience] = []
    deferred: List[Optional[DeferredReward]] = []
    defers = bool(getattr(env, "defers_reward", False))
    try:
        for _ in range(args.repeat_times):
            obs = env.reset()
            messages: List[Message] = []
            convo: List[int] = []
            if "system_prompt" in task.raw:
                sys_tokens = encode_text(task.raw["system_prompt"], vocab.size)
                messages.append(Message("system", sys_tokens))
                convo += [ROLE_TOKENS["system"]] + sys_tokens
            obs_tokens = encode_text(obs, vocab.size)
            messages.append(Message("user", obs_tokens))
            convo += [ROLE_TOKENS["user"]] + obs_tokens

            context_key: Optional[int] = None
            final_reward = -0.1
            env_done = 0
            rounds = 0
            for rounds in range(max_env_steps):
                convo.append(ROLE_TOKENS["assistant"])
                if context_key is None:
                    context_key = sequence_key(convo)
                gen, lps = policy_mod.sample_span(
                    params,
                    context_key,
                    len(convo),
                    args.temperature,
                    args.max_new_tokens,
                    rng,
                )
                messages.append(Message("assistant", gen, lps))
                convo.extend(gen)
                action = gen[:-1] if gen and gen[-1] == vocab.eos_token else gen
                obs, reward, done, _ = env.step(decode_tokens(action))
                if done:
                    final_reward = reward
                    env_done = 1
                    break
                obs_tokens = encode_text(obs, vocab.size)
                messages.append(Message("user", obs_tokens))
                convo += [ROLE_TOKENS["user"]] + obs_tokens

            info = {"env_rounds": float(rounds), "env_done": float(env_done)}
            withheld = env.claim_withheld() if defers and env_done else None
            if withheld is not None:
                experiences.append(
                    concat_to_experience(
                        messages, None, info, task.task_key, params.version
                    )
                )
                deferred.append(DeferredReward(withheld, env.delay_ticks))
            else:
                experiences.append(
                    concat_to_experience(
                        messages, final_reward, info, task.task_key, params.version
                    )
                )
                deferred.append(None)
    finally:
        env.close()
    return WorkflowOutput(experiences, deferred)


def _wrap_env(env: Environment, raw: Dict[str, str], rng: np.random.Generator) -> Environment:
    fail_prob = float(raw.get("fail_prob", 0.0))
    if fail_prob > 0.0:
        env = FlakyEnv(env, fail_prob, rng)
    if "delay_ticks" in raw:
        env = DelayedRewardEnv(env, int(raw["delay_ticks"]))
    return env


@register_workflow
class ExampleWorkflow(Workflow):
    """Single-turn question answering."""

    name = "example_workflow"
    required_keys = ("question", "answer")

    def run(
        self, task: Task, params: PolicyParams, rng: np.random.Generator
    ) -> WorkflowOutput:
        self.check_raw(task)
        return run_single_turn(task, params, rng)


@register_workflow
class GridworldWorkflow(Workflow):
    """Multi-turn navigation in a small deterministic grid."""

    name = "gridworld_workflow"
    required_keys = ("width", "height", "goal_x", "goal_y")

    def run(
        self, task: Task, params: PolicyParams, rng: np.random.Generator
    ) -> WorkflowOutput:
        self.check_raw(task)
        raw = task.raw
        env = GridworldEnv(
            int(raw["width"]),
            int(raw["height"]),
            (int(raw["goal_x"]), int(raw["goal_y"])),
        )
        return run_multi_turn(
            task,
            params,
            _wrap_env(env, raw, rng),
            int(raw.get("max_env_steps", 4)),
            rng,
        )


@register_workflow
class StringMatchWorkflow(Workflow):
    """One-step environment episode: say the target string."""

    name = "string_match_workflow"
    required_keys = ("target",)

    def run(
        self, task: Task, params: PolicyParams, rng: np.random.Generator
    ) -> WorkflowOutput:
        self.check_raw(task)
        env = StringMatchEnv(task.raw["target"])
        return run_multi_turn(
            task,
            params,
            _wrap_env(env, task.raw, rng),
            int(task.raw.get("max_env_steps", 1)),
            rng,
        )
