"""Deterministic hashing and the toy text<->token codec.

All identity hashes in the system (task keys, policy context keys, state
bucketing) are 64-bit FNV-1a so that results are stable across runs,
platforms and processes. Python's built-in ``hash`` is salted per process
and must never be used for anything persisted.
"""

from __future__ import annotations

import struct
from typing import Iterable, List, Sequence

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over raw bytes."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def token_bytes(tokens: Iterable[int]) -> bytes:
    """Serialize a token sequence as little-endian signed 64-bit words."""
    return b"".join(struct.pack("<q", t) for t in tokens)


def sequence_key(tokens: Sequence[int]) -> int:
    """Stable identity hash of a token sequence (e.g. a prompt)."""
    return fnv1a64(token_bytes(tokens))


def text_key(text: str) -> int:
    """Stable identity hash of a text payload (e.g. a raw question)."""
    return fnv1a64(text.encode("utf-8"))


def encode_text(text: str, vocab_size: int) -> List[int]:
    """Map text to toy tokens, one token per whitespace-separated word.

    Words that are integer literals inside the vocabulary map to themselves,
    so that ``decode_tokens`` followed by ``encode_text`` is the identity on
    model-generated text. Anything else hashes into the vocabulary.
    """
    tokens = []
    for word in text.split():
        try:
            value = int(word)
        except ValueError:
            value = -1
        if 0 <= value < vocab_size:
            tokens.append(value)
        else:
            tokens.append(fnv1a64(word.encode("utf-8")) % vocab_size)
    return tokens


def decode_tokens(tokens: Sequence[int]) -> str:
    """Render tokens as text; inverse of ``encode_text`` for generated output."""
    return " ".join(str(t) for t in tokens)
