"""Append-only JSON-lines event logs with replay.

Every durable store in the system (experience buffer, dataset/preference
stores, annotation service) is an append-only log of single-line JSON events.
A write is acknowledged once the line has been flushed; replay reconstructs
state from any prefix of acknowledged writes and tolerates one trailing
partial line (the signature of a crash mid-append). A malformed line anywhere
else is corruption and raises.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Callable, Iterator, List, Optional


class LogCorruptionError(RuntimeError):
    """A non-terminal log line failed to parse."""


class JsonlLog:
    """One append-only event log backed by a single file."""

    def __init__(self, path: os.PathLike, fsync: bool = False) -> None:
        self.path = Path(path)
        self.fsync = fsync
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")
        # Test hook: called after each acknowledged append (e.g. to inject a
        # crash at a persistence boundary).
        self.after_append: Optional[Callable[[dict], None]] = None

    def append(self, event: dict) -> None:
        line = json.dumps(event, separators=(",", ":"))
        self._fh.write(line + "\n")
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        if self.after_append is not None:
            self.after_append(event)

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def replay(path: os.PathLike) -> Iterator[dict]:
        """Yield all acknowledged events; skip a trailing partial line."""
        path = Path(path)
        if not path.exists():
            return
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        # A well-formed log ends with "\n", so the final split element is "".
        terminated, tail = lines[:-1], lines[-1]
        for idx, line in enumerate(terminated):
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogCorruptionError(
                    f"{path}: malformed event at line {idx + 1}"
                ) from exc
        if tail:
            # Crash artifact: unterminated final line. Parseable or not, it
            # was never acknowledged, so it is dropped.
            return

    @staticmethod
    def load(path: os.PathLike) -> List[dict]:
        return list(JsonlLog.replay(path))
