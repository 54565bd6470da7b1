"""Simulated clock with a deterministic timer queue.

Time is an integer count of nanoseconds. Protocol code may move time forward
with :meth:`SimClock.advance` (the call "took" that long); timers only fire
when the driver calls :meth:`SimClock.run_until` or :meth:`SimClock.run_due`,
which keeps protocol code free of re-entrant callbacks.
"""
from __future__ import annotations

import heapq
import itertools
from typing import Any, Callable

from .errors import NodeCrashed, ProcessCrashed

NS = 1
US = 1_000
MS = 1_000_000
SEC = 1_000_000_000


class SimClock:
    def __init__(self, start: int = 0):
        self.now = start
        self._timers: list[tuple[int, int, str, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._cancelled: set[int] = set()

    def advance(self, dt: int) -> int:
        if dt < 0:
            raise ValueError("time cannot go backwards")
        self.now += int(dt)
        return self.now

    def advance_to(self, t: int) -> int:
        if t > self.now:
            self.now = int(t)
        return self.now

    def schedule(self, at: int, fn: Callable[[], None], tag: str = "") -> int:
        seq = next(self._seq)
        heapq.heappush(self._timers, (int(at), seq, tag, fn))
        return seq

    def cancel(self, timer_id: int) -> None:
        self._cancelled.add(timer_id)

    def next_timer(self) -> int | None:
        while self._timers and self._timers[0][1] in self._cancelled:
            heapq.heappop(self._timers)
        return self._timers[0][0] if self._timers else None

    def run_due(self) -> int:
        """Fire every timer whose deadline is at or before now."""
        fired = 0
        while True:
            nxt = self.next_timer()
            if nxt is None or nxt > self.now:
                return fired
            _, seq, _, fn = heapq.heappop(self._timers)
            fn()
            fired += 1

    def run_until(self, t: int) -> int:
        """Advance to ``t``, firing timers in deadline order on the way."""
        fired = 0
        while True:
            nxt = self.next_timer()
            if nxt is None or nxt > t:
                break
            self.advance_to(nxt)
            _, seq, _, fn = heapq.heappop(self._timers)
            fn()
            fired += 1
        self.advance_to(t)
        return fired

    def parallel(self, branches: list[Callable[[], Any]]) -> list[Any]:
        """Run independent branches as if concurrently.

        Each branch starts at the current time; afterwards the clock sits at
        the latest branch end. Results, or the exception a branch raised, are
        returned in branch order. A crash of the calling node or process
        unwinds immediately.
        """
        start = self.now
        end = start
        out: list[Any] = []
        for fn in branches:
            self.now = start
            try:
                out.append(fn())
            except (NodeCrashed, ProcessCrashed):
                self.now = max(end, self.now)
                raise
            except Exception as exc:
                out.append(exc)
            end = max(end, self.now)
        self.now = end
        return out
