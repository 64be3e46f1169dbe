"""Deterministic discrete-event scheduler in virtual time (days).

Processes are generators that yield delays. Events at equal times run in
the order they were scheduled, so a run is reproducible given its seeds.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable, Generator

Process = Generator[float, None, None]


class Scheduler:
    def __init__(self, start: float = 0.0):
        self.now = float(start)
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._queue)

    def call_at(self, when: float, fn: Callable[[], None]) -> None:
        if when < self.now:
            raise ValueError(f"cannot schedule in the past ({when} < {self.now})")
        heapq.heappush(self._queue, (float(when), next(self._seq), fn))

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        if delay < 0:
            raise ValueError("delay must be non-negative")
        self.call_at(self.now + delay, fn)

    def spawn(self, proc: Process, delay: float = 0.0) -> None:
        def step():
            try:
                wait = next(proc)
            except StopIteration:
                return
            self.call_later(wait, step)
        self.call_later(delay, step)

    def run(self, until: float | None = None) -> float:
        while self._queue:
            when, _, fn = self._queue[0]
            if until is not None and when > until:
                break
            heapq.heappop(self._queue)
            self.now = when
            fn()
        return self.now
