"""Toy environments and wrappers for rollout workflows.

The Environment contract mirrors the usual gym shape: reset() returns an
observation string, step(action) returns (observation, reward, done, info),
close() releases the instance. Stepping a finished or closed environment is
rejected.
"""

from __future__ import annotations

import heapq
import threading
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np


class EnvError(RuntimeError):
    """Contract violation (step after done, bad spec, use after close)."""


class EnvFailure(RuntimeError):
    """Transient rollout failure; the run loop's retry policy handles it."""


class Environment:
    def reset(self) -> str:
        raise NotImplementedError

    def step(self, action: str) -> Tuple[str, float, bool, Dict[str, float]]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class StringMatchEnv(Environment):
    """One-shot environment: answer the target string, reward 1.0 on match."""

    def __init__(self, target: str) -> None:
        if not target:
            raise EnvError("target must be nonempty")
        self.target = target
        self._done = False
        self._closed = False

    def reset(self) -> str:
        self._check_open()
        self._done = False
        return f"say {self.target}"

    def step(self, action: str) -> Tuple[str, float, bool, Dict[str, float]]:
        self._check_open()
        if self._done:
            raise EnvError("step after done")
        self._done = True
        reward = 1.0 if action == self.target else 0.0
        return "", reward, True, {}

    def close(self) -> None:
        self._closed = True

    def _check_open(self) -> None:
        if self._closed:
            raise EnvError("environment is closed")


GRID_ACTIONS = ["up", "down", "left", "right"]
_MOVES = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}


class GridworldEnv(Environment):
    """Deterministic 4-action grid; reward 1.0 at the goal, 0 otherwise.

    Actions are the words up/down/left/right or an integer index into
    GRID_ACTIONS; anything else is a no-op step (the paper-gap penalty for
    unparseable actions: zero reward, episode continues).
    """

    def __init__(self, width: int, height: int, goal: Tuple[int, int]) -> None:
        if width < 1 or height < 1:
            raise EnvError(f"invalid grid {width}x{height}")
        gx, gy = goal
        if not (0 <= gx < width and 0 <= gy < height):
            raise EnvError(f"goal {goal} outside {width}x{height} grid")
        if (gx, gy) == (0, 0):
            raise EnvError("goal must differ from the start cell (0,0)")
        self.width = width
        self.height = height
        self.goal = (gx, gy)
        self._pos = (0, 0)
        self._done = False
        self._closed = False

    def reset(self) -> str:
        self._check_open()
        self._pos = (0, 0)
        self._done = False
        return self._observe()

    def _observe(self) -> str:
        return f"pos {self._pos[0]} {self._pos[1]}"

    def _parse(self, action: str) -> Optional[str]:
        action = action.strip()
        if action in _MOVES:
            return action
        try:
            idx = int(action)
        except ValueError:
            return None
        if 0 <= idx < len(GRID_ACTIONS):
            return GRID_ACTIONS[idx]
        return None

    def step(self, action: str) -> Tuple[str, float, bool, Dict[str, float]]:
        self._check_open()
        if self._done:
            raise EnvError("step after done")
        move = self._parse(action)
        if move is not None:
            dx, dy = _MOVES[move]
            x = min(max(self._pos[0] + dx, 0), self.width - 1)
            y = min(max(self._pos[1] + dy, 0), self.height - 1)
            self._pos = (x, y)
        if self._pos == self.goal:
            self._done = True
            return self._observe(), 1.0, True, {}
        return self._observe(), 0.0, False, {}

    def close(self) -> None:
        self._closed = True

    def _check_open(self) -> None:
        if self._closed:
            raise EnvError("environment is closed")


class TickScheduler:
    """Logical clock. Ticks are task completions, not wall time, so delayed
    rewards are deterministic under test."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._now = 0
        self._seq = 0
        self._heap: List[Tuple[int, int, Callable[[], None]]] = []

    @property
    def now(self) -> int:
        with self._lock:
            return self._now

    def schedule(self, delay_ticks: int, fn: Callable[[], None]) -> None:
        if delay_ticks < 0:
            raise EnvError(f"delay_ticks must be >= 0, got {delay_ticks}")
        with self._lock:
            self._seq += 1
            heapq.heappush(self._heap, (self._now + delay_ticks, self._seq, fn))

    def _pop_due(self, horizon: int) -> List[Callable[[], None]]:
        due = []
        while self._heap and self._heap[0][0] <= horizon:
            due.append(heapq.heappop(self._heap)[2])
        return due

    def tick(self) -> None:
        with self._lock:
            self._now += 1
            due = self._pop_due(self._now)
        for fn in due:  # run outside the lock; callbacks may take other locks
            fn()

    def drain(self) -> None:
        """Deliver everything still scheduled (end-of-run settlement)."""
        with self._lock:
            if self._heap:
                self._now = max(self._now, max(t for t, _, _ in self._heap))
            due = self._pop_due(self._now)
        for fn in due:
            fn()

    def pending(self) -> int:
        with self._lock:
            return len(self._heap)


class DelayedRewardEnv(Environment):
    """Withholds the episode's final reward for ``delay_ticks`` of logical
    time; the workflow stores the experience as PENDING_REWARD and the run
    loop delivers mark_ready when the tick fires."""

    defers_reward = True

    def __init__(self, env: Environment, delay_ticks: int) -> None:
        if delay_ticks < 0:
            raise EnvError(f"delay_ticks must be >= 0, got {delay_ticks}")
        self.env = env
        self.delay_ticks = delay_ticks
        self.withheld: Optional[float] = None

    def reset(self) -> str:
        self.withheld = None
        return self.env.reset()

    def step(self, action: str) -> Tuple[str, float, bool, Dict[str, float]]:
        obs, reward, done, info = self.env.step(action)
        if done:
            self.withheld = reward
            return obs, 0.0, done, info
        return obs, reward, done, info

    def claim_withheld(self) -> Optional[float]:
        reward, self.withheld = self.withheld, None
        return reward

    def close(self) -> None:
        self.env.close()


class FlakyEnv(Environment):
    """Raises EnvFailure with probability fail_prob on each step."""

    def __init__(self, env: Environment, fail_prob: float, rng: np.random.Generator) -> None:
        if not 0.0 <= fail_prob <= 1.0:
            raise EnvError(f"fail_prob must be in [0,1], got {fail_prob}")
        self.env = env
        self.fail_prob = fail_prob
        self.rng = rng

    def reset(self) -> str:
        return self.env.reset()

    def step(self, action: str) -> Tuple[str, float, bool, Dict[str, float]]:
        if self.fail_prob > 0.0 and self.rng.random() < self.fail_prob:
            raise EnvFailure("injected environment failure")
        return self.env.step(action)

    def close(self) -> None:
        self.env.close()
