"""Discrete-event kernel: a virtual clock in milliseconds and a seeded network."""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Callable


class EventLoop:
    """Runs callbacks in time order; equal times run in scheduling order."""

    def __init__(self):
        self.now = 0.0
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0
        self.events_run = 0

    def at(self, when: float, fn: Callable[[], None]) -> None:
        if when < self.now:
            when = self.now
        self._seq += 1
        heapq.heappush(self._queue, (when, self._seq, fn))

    def after(self, delay: float, fn: Callable[[], None]) -> None:
        self.at(self.now + delay, fn)

    def run(self, until: float | None = None, stop: Callable[[], bool] | None = None) -> None:
        while self._queue:
            when, _, fn = self._queue[0]
            if until is not None and when > until:
                break
            heapq.heappop(self._queue)
            self.now = when
            fn()
            self.events_run += 1
            if stop is not None and stop():
                break

    def __len__(self) -> int:
        return len(self._queue)


@dataclass
class NetworkModel:
    """Per-message delay: ``delay_ms`` plus uniform jitter in ``[-jitter_ms, jitter_ms]``."""

    delay_ms: float = 5.0
    jitter_ms: float = 1.0
    rng: random.Random | None = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = random.Random(0)

    def sample(self) -> float:
        if self.jitter_ms <= 0:
            return self.delay_ms
        return max(0.0, self.delay_ms + self.rng.uniform(-self.jitter_ms, self.jitter_ms))
