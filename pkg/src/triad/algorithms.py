"""Training losses with exact gradients, plus the SGD update step.

Three mirror-descent surrogates over task groups (squared-residual,
pairwise-difference, and the group-mean-baseline policy gradient), standard
SFT and DPO for train-only runs, and a forward-KL anchor regularizer. All
gradients are analytic over the logits table and are audited against finite
differences in the test suite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import policy
from .policy import PolicyParams, Response, SparseGrad
from .records import Experience, TaskGroup


class AlgorithmError(ValueError):
    """Invalid algorithm configuration or loss input."""


class Variant(str, enum.Enum):
    OPMD_KIMI = "OPMD_KIMI"
    OPMD_PAIRWISE = "OPMD_PAIRWISE"
    OPMD_SIMPLE = "OPMD_SIMPLE"
    SFT = "SFT"
    DPO = "DPO"


@dataclass
class AlgorithmConfig:
    variant: Variant = Variant.OPMD_SIMPLE
    tau: float = 1.0
    beta: float = 0.0
    dpo_beta: float = 0.1
    learning_rate: float = 0.1

    def __post_init__(self) -> None:
        if isinstance(self.variant, str):
            self.variant = Variant(self.variant)
        if self.tau < 0:
            raise AlgorithmError(f"tau must be >= 0, got {self.tau}")
        if self.variant in (Variant.OPMD_KIMI, Variant.OPMD_PAIRWISE) and self.tau <= 0:
            raise AlgorithmError(f"{self.variant.value} requires tau > 0")
        if self.beta < 0:
            raise AlgorithmError(f"beta must be >= 0, got {self.beta}")
        if self.dpo_beta <= 0:
            raise AlgorithmError(f"dpo_beta must be > 0, got {self.dpo_beta}")
        if self.learning_rate <= 0:
            raise AlgorithmError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class LossReport:
    loss: float
    gradient: SparseGrad
    metrics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not math.isfinite(self.loss):
            raise AlgorithmError(f"loss must be finite, got {self.loss}")
        if not self.gradient.is_finite():
            raise AlgorithmError("gradient must be finite")


def _as_response(exp: Experience) -> Response:
    return Response(
        tokens=exp.tokens,
        prompt_length=exp.prompt_length,
        logprobs=exp.logprobs,
        action_mask=exp.action_mask,
    )


def experience_logprob(params: PolicyParams, exp: Experience) -> float:
    """Current policy's total log-probability of a stored experience."""
    prompt = exp.tokens[: exp.prompt_length]
    total, _ = policy.logprob(params, prompt, _as_response(exp))
    return total


def experience_grad(params: PolicyParams, exp: Experience) -> SparseGrad:
    prompt = exp.tokens[: exp.prompt_length]
    return policy.grad_logprob(params, prompt, _as_response(exp))


def tau_log_zhat(rewards: Sequence[float], tau: float) -> float:
    """tau * log of the mean of exp(r_i / tau), via max-shifted log-sum-exp."""
    if tau <= 0:
        raise AlgorithmError(f"tau must be > 0, got {tau}")
    if not rewards:
        raise AlgorithmError("rewards must be nonempty")
    m = max(rewards)
    mean_exp = sum(math.exp((r - m) / tau) for r in rewards) / len(rewards)
    return m + tau * math.log(mean_exp)


def _group_terms(
    group: TaskGroup, params: PolicyParams
) -> Tuple[List[float], List[SparseGrad]]:
    logprobs = [experience_logprob(params, e) for e in group.experiences]
    grads = [experience_grad(params, e) for e in group.experiences]
    return logprobs, grads


def _kl_metric(logprobs: Sequence[float], ref_logprobs: Sequence[float]) -> float:
    """Sample mean of (behavior logprob - current logprob); a KL(ref||theta)
    estimate over the group's rollouts, for monitoring only."""
    return float(np.mean([r - l for l, r in zip(logprobs, ref_logprobs)]))


def loss_opmd_kimi(
    group: TaskGroup,
    params: PolicyParams,
    config: AlgorithmConfig,
    ref_params: Optional[PolicyParams] = None,
) -> LossReport:
    """Squared-residual surrogate: sum_i (r_i - tau*log Zhat - tau*(logpi - ref_i))^2.

    ``ref_logprobs`` normally come from rollout time; passing ``ref_params``
    recomputes them from an explicit reference table instead.
    """
    if config.tau <= 0:
        raise AlgorithmError("OPMD_KIMI requires tau > 0")
    if ref_params is not None:
        refs = [experience_logprob(ref_params, e) for e in group.experiences]
    else:
        if group.ref_logprobs is None:
            raise AlgorithmError("OPMD_KIMI requires ref_logprobs")
        refs = group.ref_logprobs
    rewards = group.rewards
    tau = config.tau
    zhat = tau_log_zhat(rewards, tau)
    logprobs, grads = _group_terms(group, params)
    loss = 0.0
    grad = SparseGrad()
    for r, lp, ref, g in zip(rewards, logprobs, refs, grads):
        residual = r - zhat - tau * (lp - ref)
        loss += residual * residual
        grad.axpy(-2.0 * tau * residual, g)
    metrics = {
        "mean_reward": float(np.mean(rewards)),
        "baseline": zhat,
        "kl_estimate": _kl_metric(logprobs, refs),
        "group_size": float(group.size),
    }
    return LossReport(loss=loss, gradient=grad, metrics=metrics)


def loss_opmd_pairwise(
    group: TaskGroup, params: PolicyParams, config: AlgorithmConfig
) -> LossReport:
    """Pairwise surrogate: sum_{i<j} (a_i - a_j)^2 over arbitrary rollouts.

    a_i = r_i - tau*(logpi(y_i) - ref_i). The reference log-probs may come
    from any behavior policy, which is what makes this fully off-policy.
    """
    if config.tau <= 0:
        raise AlgorithmError("OPMD_PAIRWISE requires tau > 0")
    if group.size < 2:
        raise AlgorithmError("pairwise loss needs a group of at least 2 rollouts")
    tau = config.tau
    rewards = group.rewards
    refs = group.ref_logprobs
    logprobs, grads = _group_terms(group, params)
    a = [r - tau * (lp - ref) for r, lp, ref in zip(rewards, logprobs, refs)]
    k = group.size
    loss = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            diff = a[i] - a[j]
            loss += diff * diff
    # d loss / d a_i = 2 * (K * a_i - sum(a)); d a_i / d theta = -tau * grad_i
    total_a = sum(a)
    grad = SparseGrad()
    for i in range(k):
        grad.axpy(-2.0 * tau * (k * a[i] - total_a), grads[i])
    metrics = {
        "mean_reward": float(np.mean(rewards)),
        "baseline": float(np.mean(rewards)),
        "kl_estimate": _kl_metric(logprobs, refs),
        "group_size": float(k),
    }
    return LossReport(loss=loss, gradient=grad, metrics=metrics)


def regularizer_g(
    params: PolicyParams, sft_params: PolicyParams, group: TaskGroup
) -> Tuple[float, SparseGrad]:
    """Anchor regularizer: mean over rollouts of the summed per-visited-state
    forward KL between the current and anchor token distributions."""
    if params.shape != sft_params.shape:
        raise AlgorithmError(
            f"parameter shapes differ: {params.shape} vs {sft_params.shape}"
        )
    k = group.size
    total = 0.0
    grad = SparseGrad()
    for exp in group.experiences:
        prompt = exp.tokens[: exp.prompt_length]
        context_key = policy.sequence_key(prompt)
        for _, state, _ in policy.scored_states(
            params, context_key, exp.tokens, exp.action_mask
        ):
            p = policy.softmax(params.logits[state])
            log_p = policy.log_softmax(params.logits[state])
            log_q = policy.log_softmax(sft_params.logits[state])
            kl = float(np.sum(p * (log_p - log_q)))
            total += kl / k
            grad.add_row(state, p * ((log_p - log_q) - kl) / k)
    return total, grad


def loss_opmd_simple(
    group: TaskGroup,
    params: PolicyParams,
    config: AlgorithmConfig,
    sft_params: Optional[PolicyParams] = None,
) -> LossReport:
    """Group-mean-baseline policy gradient surrogate with a 1/(1+tau) scale.

    loss = -(1/(1+tau)) * sum_i (r_i - rbar) * logpi(y_i), plus beta times the
    anchor regularizer when an anchor table is supplied. With tau=0 and beta=0
    this is the plain policy gradient with the group mean as baseline.
    """
    if config.beta > 0 and sft_params is None:
        raise AlgorithmError("beta > 0 requires sft_params")
    rewards = group.rewards
    rbar = float(np.mean(rewards))
    coef = 1.0 / (1.0 + config.tau)
    logprobs, grads = _group_terms(group, params)
    loss = 0.0
    grad = SparseGrad()
    for r, lp, g in zip(rewards, logprobs, grads):
        loss -= coef * (r - rbar) * lp
        grad.axpy(-coef * (r - rbar), g)
    if config.beta > 0 and sft_params is not None:
        g_value, g_grad = regularizer_g(params, sft_params, group)
        loss += config.beta * g_value
        grad.axpy(config.beta, g_grad)
    metrics = {
        "mean_reward": rbar,
        "baseline": rbar,
        "kl_estimate": _kl_metric(logprobs, group.ref_logprobs),
        "group_size": float(group.size),
    }
    return LossReport(loss=loss, gradient=grad, metrics=metrics)


def loss_sft(batch: Sequence[Experience], params: PolicyParams) -> LossReport:
    """Mean negative log-likelihood of the trainable tokens."""
    if not batch:
        raise AlgorithmError("SFT batch must be nonempty")
    n = len(batch)
    loss = 0.0
    grad = SparseGrad()
    for exp in batch:
        lp = experience_logprob(params, exp)
        loss -= lp / n
        grad.axpy(-1.0 / n, experience_grad(params, exp))
    rewards = [e.reward for e in batch if e.reward is not None]
    metrics = {
        "mean_reward": float(np.mean(rewards)) if rewards else 0.0,
        "baseline": 0.0,
        "kl_estimate": 0.0,
        "group_size": float(n),
    }
    return LossReport(loss=loss, gradient=grad, metrics=metrics)


def loss_dpo(
    pairs: Sequence[Tuple[Experience, Experience]],
    params: PolicyParams,
    ref: PolicyParams,
    dpo_beta: float,
) -> LossReport:
    """Mean of -log sigmoid(beta * margin) over preference pairs, where the
    margin is the chosen-minus-rejected difference of policy/reference
    log-ratio terms."""
    if not pairs:
        raise AlgorithmError("DPO batch must be nonempty")
    if dpo_beta <= 0:
        raise AlgorithmError(f"dpo_beta must be > 0, got {dpo_beta}")
    n = len(pairs)
    loss = 0.0
    grad = SparseGrad()
    margins = []
    for chosen, rejected in pairs:
        c_prompt = chosen.tokens[: chosen.prompt_length]
        r_prompt = rejected.tokens[: rejected.prompt_length]
        if c_prompt != r_prompt:
            raise AlgorithmError("chosen and rejected must share a prompt")
        margin = dpo_beta * (
            (experience_logprob(params, chosen) - experience_logprob(ref, chosen))
            - (experience_logprob(params, rejected) - experience_logprob(ref, rejected))
        )
        margins.append(margin)
        # -log sigmoid(m): stable via softplus(-m)
        loss += _softplus(-margin) / n
        coef = (_sigmoid(margin) - 1.0) * dpo_beta / n
        grad.axpy(coef, experience_grad(params, chosen))
        grad.axpy(-coef, experience_grad(params, rejected))
    metrics = {
        "mean_reward": float(np.mean(margins)),
        "baseline": 0.0,
        "kl_estimate": 0.0,
        "group_size": float(n),
    }
    return LossReport(loss=loss, gradient=grad, metrics=metrics)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softplus(x: float) -> float:
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def apply_update(
    params: PolicyParams, gradient: SparseGrad, learning_rate: float
) -> PolicyParams:
    """One SGD step: new logits = old - lr * gradient, version incremented.

    The input table is never mutated; a non-finite gradient is rejected
    before any allocation."""
    if not gradient.is_finite():
        raise AlgorithmError("refusing to apply a non-finite gradient")
    logits = np.array(params.logits)
    for state, vec in gradient.rows.items():
        if not 0 <= state < params.num_buckets:
            raise AlgorithmError(f"gradient row {state} outside the logits table")
        logits[state] -= learning_rate * vec
    return PolicyParams(
        logits=logits,
        version=params.version + 1,
        vocab=params.vocab,
        num_buckets=params.num_buckets,
    )


def group_loss(
    group: TaskGroup,
    params: PolicyParams,
    config: AlgorithmConfig,
    sft_params: Optional[PolicyParams] = None,
    ref_params: Optional[PolicyParams] = None,
) -> LossReport:
    """Dispatch a task group to the configured group-based loss."""
    if config.variant == Variant.OPMD_KIMI:
        return loss_opmd_kimi(group, params, config, ref_params=ref_params)
    if config.variant == Variant.OPMD_PAIRWISE:
        return loss_opmd_pairwise(group, params, config)
    if config.variant == Variant.OPMD_SIMPLE:
        return loss_opmd_simple(group, params, config, sft_params=sft_params)
    raise AlgorithmError(f"{config.variant.value} is not a group-based loss")


def combine_reports(reports: Sequence[LossReport]) -> LossReport:
    """Batch aggregation: losses and gradients summed, metrics averaged."""
    if not reports:
        raise AlgorithmError("cannot combine an empty report list")
    grad = SparseGrad()
    loss = 0.0
    for rep in reports:
        loss += rep.loss
        grad.axpy(1.0, rep.gradient)
    keys = reports[0].metrics.keys()
    metrics = {k: float(np.mean([r.metrics[k] for r in reports])) for k in keys}
    return LossReport(loss=loss, gradient=grad, metrics=metrics)
