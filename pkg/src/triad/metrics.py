"""Per-step training metrics: one JSON line per trainer step, fixed key
order, injectable clock so deterministic runs stay byte-reproducible."""

from __future__ import annotations

import time
from pathlib import Path
from typing import Callable, List, Union

from .storage import JsonlLog

METRIC_KEYS = (
    "step",
    "mode",
    "loss",
    "mean_reward",
    "baseline",
    "kl_estimate",
    "staleness",
    "wall_ms",
)


class LogicalClock:
    """Counts milliseconds of logical time: one per observation."""

    def __init__(self) -> None:
        self._ms = 0

    def __call__(self) -> float:
        now = self._ms / 1000.0
        self._ms += 1
        return now


class MetricsWriter:
    def __init__(
        self, path: Union[str, Path], clock: Callable[[], float] = time.monotonic
    ) -> None:
        self._log = JsonlLog(path)
        self._clock = clock
        self._start = clock()

    @property
    def path(self) -> Path:
        return self._log.path

    def write(
        self,
        step: int,
        mode: str,
        loss: float,
        mean_reward: float,
        baseline: float,
        kl_estimate: float,
        staleness: int,
    ) -> dict:
        row = {
            "step": step,
            "mode": mode,
            "loss": float(loss),
            "mean_reward": float(mean_reward),
            "baseline": float(baseline),
            "kl_estimate": float(kl_estimate),
            "staleness": int(staleness),
            "wall_ms": int(round((self._clock() - self._start) * 1000.0)),
        }
        self._log.append(row)
        return row

    def close(self) -> None:
        self._log.close()


def read_metrics(path: Union[str, Path]) -> List[dict]:
    return JsonlLog.load(path)
