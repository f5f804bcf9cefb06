"""Fixed binary checkpoint format for policy parameters.

Layout (little-endian):
    8 bytes   magic "TRIADCKP"
    1 byte    format version
    4 x u64   params version, num_buckets, vocab size, eos token
    then      num_buckets * vocab_size float64 logits, row-major

Writes go through a temp file and an atomic rename, so a reader never sees
a half-written checkpoint.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .policy import PolicyParams, Vocabulary

MAGIC = b"TRIADCKP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<QQQQ")


class CheckpointError(RuntimeError):
    """Unreadable or malformed checkpoint file."""


def save_checkpoint(path: Union[str, Path], params: PolicyParams) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = (
        MAGIC
        + bytes([FORMAT_VERSION])
        + _HEADER.pack(
            params.version,
            params.num_buckets,
            params.vocab.size,
            params.vocab.eos_token,
        )
        + np.ascontiguousarray(params.logits, dtype="<f8").tobytes()
    )
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: Union[str, Path]) -> PolicyParams:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    prefix = len(MAGIC) + 1 + _HEADER.size
    if len(blob) < prefix:
        raise CheckpointError(f"{path}: truncated header")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    fmt = blob[len(MAGIC)]
    if fmt != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {fmt}")
    version, num_buckets, vocab_size, eos_token = _HEADER.unpack_from(
        blob, len(MAGIC) + 1
    )
    expected = num_buckets * vocab_size * 8
    body = blob[prefix:]
    if len(body) != expected:
        raise CheckpointError(
            f"{path}: logits payload is {len(body)} bytes, expected {expected}"
        )
    logits = np.frombuffer(body, dtype="<f8").reshape(num_buckets, vocab_size)
    return PolicyParams(
        logits=logits.astype(np.float64),
        version=int(version),
        vocab=Vocabulary(size=int(vocab_size), eos_token=int(eos_token)),
        num_buckets=int(num_buckets),
    )
