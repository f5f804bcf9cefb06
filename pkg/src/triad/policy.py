"""Exactly differentiable toy sequence policy with brute-force oracles.

The policy is an autoregressive softmax table: every scored position maps to
one of ``num_buckets`` context states via a stable hash of (context key,
position, previous generated token), and each state owns one row of logits
over the vocabulary. Small response spaces can be enumerated exactly, which
turns every downstream training claim into an equality check instead of a
statistical one.

Context rule: the previous-token component of a state is the preceding token
id when that token was generated (mask-true), and a fixed sentinel otherwise.
Together with hashing the prompt through a single context key, this makes
log-probabilities and their gradients depend only on the context key and the
generated tokens -- never on the identity of non-trainable tokens.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .encoding import _MASK64, fnv1a64, sequence_key

#: Previous-token value used when there is no usable (mask-true) predecessor.
CONTEXT_SENTINEL = -1

#: Hard cap on the number of enumerable responses.
ENUMERATION_LIMIT = 10**6


class PolicyError(ValueError):
    """Invalid input to a policy operation."""


class EnumerationLimitError(PolicyError):
    """Response space too large for brute-force enumeration."""


@dataclass(frozen=True)
class Vocabulary:
    """Token alphabet for responses."""

    size: int
    eos_token: int

    def __post_init__(self) -> None:
        if self.size < 2:
            raise PolicyError(f"vocabulary size must be >= 2, got {self.size}")
        if not 0 <= self.eos_token < self.size:
            raise PolicyError(
                f"eos_token {self.eos_token} outside vocabulary of size {self.size}"
            )


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Immutable, versioned logits table defining the policy.

    ``logits`` has shape (num_buckets, vocab.size) and is frozen on
    construction; publishing a new version always allocates a fresh array.
    """

    logits: np.ndarray
    version: int
    vocab: Vocabulary
    num_buckets: int = field(default=0)

    def __post_init__(self) -> None:
        arr = np.asarray(self.logits, dtype=np.float64)
        if arr.ndim != 2:
            raise PolicyError(f"logits must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise PolicyError("logits must be finite")
        if arr.shape[1] != self.vocab.size:
            raise PolicyError(
                f"logits width {arr.shape[1]} != vocab size {self.vocab.size}"
            )
        if self.num_buckets == 0:
            object.__setattr__(self, "num_buckets", arr.shape[0])
        if arr.shape[0] != self.num_buckets:
            raise PolicyError(
                f"logits height {arr.shape[0]} != num_buckets {self.num_buckets}"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "logits", arr)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.num_buckets, self.vocab.size)


def init_params(
    num_buckets: int,
    vocab: Vocabulary,
    *,
    version: int = 0,
    scale: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> PolicyParams:
    """Fresh parameter table; zero logits unless a noise scale is given."""
    if scale > 0.0:
        if rng is None:
            raise PolicyError("random initialization requires an explicit rng")
        logits = rng.normal(0.0, scale, size=(num_buckets, vocab.size))
    else:
        logits = np.zeros((num_buckets, vocab.size))
    return PolicyParams(logits=logits, version=version, vocab=vocab)


@dataclass
class Response:
    """One rollout trajectory: full token sequence plus trainability mask.

    ``tokens`` covers prompt and generated content; ``action_mask`` is True
    exactly on generated (trainable) positions and ``logprobs`` holds the
    sampling policy's temperature-1 log-probability for each of them, in
    order.
    """

    tokens: List[int]
    prompt_length: int
    logprobs: List[float]
    action_mask: List[bool]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.action_mask):
            raise PolicyError("action_mask length must match tokens")
        if not 0 <= self.prompt_length <= len(self.tokens):
            raise PolicyError("prompt_length out of range")
        n_true = sum(1 for m in self.action_mask if m)
        if len(self.logprobs) != n_true:
            raise PolicyError(
                f"logprobs length {len(self.logprobs)} != mask-true count {n_true}"
            )
        if any(self.action_mask[: self.prompt_length]):
            raise PolicyError("prompt positions must be mask-false")

    @property
    def generated_tokens(self) -> List[int]:
        return [t for t, m in zip(self.tokens, self.action_mask) if m]

    @property
    def total_logprob(self) -> float:
        return float(sum(self.logprobs))


def state_index(task_key: int, position: int, prev_token: int, num_buckets: int) -> int:
    """Deterministic context bucket for one scored position.

    FNV-1a over the little-endian byte tuple (task_key as unsigned 64-bit,
    position and prev_token as signed 64-bit), reduced mod ``num_buckets``.
    """
    if num_buckets < 1:
        raise PolicyError(f"num_buckets must be >= 1, got {num_buckets}")
    data = struct.pack("<Qqq", task_key & _MASK64, position, prev_token)
    return fnv1a64(data) % num_buckets


def log_softmax(row: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax of a single logits row."""
    shifted = row - np.max(row)
    return shifted - math.log(np.sum(np.exp(shifted)))


def softmax(row: np.ndarray) -> np.ndarray:
    shifted = np.exp(row - np.max(row))
    return shifted / np.sum(shifted)


def _check_generated_tokens(vocab: Vocabulary, response: Response) -> None:
    for t, m in zip(response.tokens, response.action_mask):
        if m and not 0 <= t < vocab.size:
            raise PolicyError(f"token {t} outside vocabulary of size {vocab.size}")


def scored_states(
    params: PolicyParams, context_key: int, tokens: Sequence[int], mask: Sequence[bool]
) -> Iterator[Tuple[int, int, int]]:
    """Yield (position, state, token) for every mask-true position."""
    prev = CONTEXT_SENTINEL
    for pos, tok in enumerate(tokens):
        if mask[pos]:
            yield pos, state_index(context_key, pos, prev, params.num_buckets), tok
            prev = tok
        else:
            prev = CONTEXT_SENTINEL


def logprob(
    params: PolicyParams, prompt: Sequence[int], response: Response
) -> Tuple[float, List[float]]:
    """Total and per-position log-probability of a response under ``params``.

    Mask-false positions contribute exactly 0 and appear as 0.0 in the
    per-position list; the context key is derived from ``prompt`` alone.
    """
    _check_generated_tokens(params.vocab, response)
    context_key = sequence_key(prompt)
    per_token = [0.0] * len(response.tokens)
    total = 0.0
    for pos, state, tok in scored_states(
        params, context_key, response.tokens, response.action_mask
    ):
        lp = float(log_softmax(params.logits[state])[tok])
        per_token[pos] = lp
        total += lp
    return total, per_token


class SparseGrad:
    """Sparse gradient over the logits table: touched rows only."""

    def __init__(self) -> None:
        self.rows: Dict[int, np.ndarray] = {}

    def add_row(self, state: int, vec: np.ndarray) -> None:
        if state in self.rows:
            self.rows[state] = self.rows[state] + vec
        else:
            self.rows[state] = np.array(vec, dtype=np.float64)

    def axpy(self, coef: float, other: "SparseGrad") -> None:
        """self += coef * other."""
        for state, vec in other.rows.items():
            self.add_row(state, coef * vec)

    def scaled(self, coef: float) -> "SparseGrad":
        out = SparseGrad()
        for state, vec in self.rows.items():
            out.rows[state] = coef * vec
        return out

    def to_dense(self, shape: Tuple[int, int]) -> np.ndarray:
        dense = np.zeros(shape)
        for state, vec in self.rows.items():
            dense[state] += vec
        return dense

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(vec)) for vec in self.rows.values())

    def max_abs(self) -> float:
        if not self.rows:
            return 0.0
        return max(float(np.max(np.abs(vec))) for vec in self.rows.values())


def grad_logprob(
    params: PolicyParams, prompt: Sequence[int], response: Response
) -> SparseGrad:
    """Analytic gradient of ``logprob`` with respect to the logits table.

    Each mask-true position with state s and realized token a contributes
    e_a - softmax(logits[s]) to row s.
    """
    _check_generated_tokens(params.vocab, response)
    context_key = sequence_key(prompt)
    grad = SparseGrad()
    for _, state, tok in scored_states(
        params, context_key, response.tokens, response.action_mask
    ):
        vec = -softmax(params.logits[state])
        vec[tok] += 1.0
        grad.add_row(state, vec)
    return grad


def sample_span(
    params: PolicyParams,
    context_key: int,
    start_position: int,
    temperature: float,
    max_new_tokens: int,
    rng: np.random.Generator,
) -> Tuple[List[int], List[float]]:
    """Generate one span of tokens starting at an absolute position.

    Returns the generated tokens (terminated by eos or the length cap) and
    their temperature-1 log-probabilities under ``params``. Sampling itself
    uses ``temperature``; 0 means greedy argmax with ties broken toward the
    lowest token id.
    """
    if temperature < 0:
        raise PolicyError(f"temperature must be >= 0, got {temperature}")
    if max_new_tokens < 1:
        raise PolicyError(f"max_new_tokens must be >= 1, got {max_new_tokens}")
    tokens: List[int] = []
    logprobs: List[float] = []
    prev = CONTEXT_SENTINEL
    vocab = params.vocab
    for offset in range(max_new_tokens):
        state = state_index(context_key, start_position + offset, prev, params.num_buckets)
        row = params.logits[state]
        if temperature == 0.0:
            tok = int(np.argmax(row))  # argmax returns the lowest index on ties
        else:
            probs = softmax(row / temperature)
            tok = int(rng.choice(vocab.size, p=probs))
        tokens.append(tok)
        logprobs.append(float(log_softmax(row)[tok]))
        if tok == vocab.eos_token:
            break
        prev = tok
    return tokens, logprobs


def sample(
    params: PolicyParams,
    prompt: Sequence[int],
    temperature: float,
    n: int,
    max_len: int,
    rng: np.random.Generator,
) -> List[Response]:
    """Draw ``n`` responses to ``prompt``; see ``sample_span`` for semantics."""
    if n < 1:
        raise PolicyError(f"n must be >= 1, got {n}")
    context_key = sequence_key(prompt)
    out = []
    for _ in range(n):
        tokens, logprobs = sample_span(
            params, context_key, len(prompt), temperature, max_len, rng
        )
        out.append(
            Response(
                tokens=list(prompt) + tokens,
                prompt_length=len(prompt),
                logprobs=logprobs,
                action_mask=[False] * len(prompt) + [True] * len(tokens),
            )
        )
    return out


def count_responses(vocab_size: int, max_len: int) -> int:
    """Number of distinct responses of length <= max_len (eos- or cap-ended)."""
    count = vocab_size  # at capacity 1 every token is terminal
    for _ in range(max_len - 1):
        count = 1 + (vocab_size - 1) * count
    return count


def _enumerate_logprobs(
    params: PolicyParams, prompt: Sequence[int], max_len: int
) -> Dict[Tuple[int, ...], float]:
    """Log-probability of every possible generated token sequence."""
    total = count_responses(params.vocab.size, max_len)
    if total > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"response space has {total} sequences, exceeding the "
            f"enumeration limit of {ENUMERATION_LIMIT}"
        )
    context_key = sequence_key(prompt)
    start = len(prompt)
    eos = params.vocab.eos_token
    out: Dict[Tuple[int, ...], float] = {}

    def walk(prefix: Tuple[int, ...], prev: int, acc: float) -> None:
        position = start + len(prefix)
        state = state_index(context_key, position, prev, params.num_buckets)
        row = log_softmax(params.logits[state])
        last = len(prefix) + 1 == max_len
        for tok in range(params.vocab.size):
            lp = acc + float(row[tok])
            if tok == eos or last:
                out[prefix + (tok,)] = lp
            else:
                walk(prefix + (tok,), tok, lp)

    walk((), CONTEXT_SENTINEL, 0.0)
    return out


def enumerate_policy(
    params: PolicyParams, prompt: Sequence[int], max_len: int
) -> Dict[Tuple[int, ...], float]:
    """Exact probability of every possible response; sums to 1."""
    return {y: math.exp(lp) for y, lp in _enumerate_logprobs(params, prompt, max_len).items()}


def optimal_policy_oracle(
    ref: PolicyParams,
    reward_fn: Callable[[Tuple[int, ...]], float],
    tau: float,
    prompt: Sequence[int],
    max_len: int,
) -> Tuple[Dict[Tuple[int, ...], float], float]:
    """Closed-form optimum of the KL-regularized objective, by enumeration.

    Returns the distribution proportional to ref(y) * exp(r(y)/tau) together
    with its normalizer Z = E_ref[exp(r/tau)].
    """
    if tau <= 0:
        raise PolicyError(f"tau must be > 0, got {tau}")
    ref_probs = enumerate_policy(ref, prompt, max_len)
    weights = {y: p * math.exp(reward_fn(y) / tau) for y, p in ref_probs.items()}
    z = sum(weights.values())
    return {y: w / z for y, w in weights.items()}, z


def exact_kl(
    p: PolicyParams, q: PolicyParams, prompt: Sequence[int], max_len: int
) -> float:
    """Exact KL(p || q) over the full response space."""
    if p.vocab != q.vocab:
        raise PolicyError("policies must share a vocabulary for exact KL")
    p_log = _enumerate_logprobs(p, prompt, max_len)
    q_log = _enumerate_logprobs(q, prompt, max_len)
    kl = 0.0
    for y, lp in p_log.items():
        lq = q_log.get(y)
        if lq is None or lq == -math.inf:
            raise PolicyError(f"q assigns zero probability to response {y}")
        kl += math.exp(lp) * (lp - lq)
    return kl
