"""Virtual clock and event scheduler.

Single-threaded discrete-event core: every timestamp in the testbed derives
from one SimClock, events execute in (time, insertion order), and nothing
mutates outside an event callback. Times are integer microseconds.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable


class SchedulingInPast(Exception):
    """Raised when an event is scheduled before the current clock time."""


class SimClock:
    """Monotonic virtual time in microseconds since scenario start."""

    __slots__ = ("now",)

    def __init__(self) -> None:
        self.now: int = 0


class Scheduler:
    """Event queue ordered by (time, insertion order).

    Ties at equal timestamps execute FIFO by insertion. Cancellation is lazy:
    cancelled entries stay in the heap and are skipped when popped.
    """

    def __init__(self) -> None:
        self.clock = SimClock()
        self._heap: list[tuple[int, int, int]] = []
        self._callbacks: dict[int, Callable[[], None]] = {}
        self._tie = itertools.count()
        self._ids = itertools.count(1)

    def __len__(self) -> int:
        return len(self._callbacks)

    def schedule(self, fn: Callable[[], None], at: int) -> int:
        """Schedule ``fn`` to fire once when the clock reaches ``at``."""
        if at < self.clock.now:
            raise SchedulingInPast(f"at={at} < now={self.clock.now}")
        event_id = next(self._ids)
        self._callbacks[event_id] = fn
        heapq.heappush(self._heap, (at, next(self._tie), event_id))
        return event_id

    def schedule_in(self, fn: Callable[[], None], delay_us: int) -> int:
        return self.schedule(fn, self.clock.now + delay_us)

    def cancel(self, event_id: int) -> None:
        self._callbacks.pop(event_id, None)

    def peek_time(self) -> int | None:
        heap = self._heap
        while heap:
            at, _, event_id = heap[0]
            if event_id in self._callbacks:
                return at
            heapq.heappop(heap)
        return None

    def step(self) -> bool:
        """Execute the next pending event. Returns False when idle."""
        while self._heap:
            at, _, event_id = heapq.heappop(self._heap)
            fn = self._callbacks.pop(event_id, None)
            if fn is None:
                continue  # lazily cancelled
            self.clock.now = at
            fn()
            return True
        return False

    def run(self, until: int | None = None) -> None:
        """Run events in order; with ``until``, stop after events at <= until
        and leave the clock there."""
        if until is None:
            while self.step():
                pass
            return
        while True:
            at = self.peek_time()
            if at is None or at > until:
                break
            self.step()
        if until > self.clock.now:
            self.clock.now = until
