"""Deterministic virtual-time event queue."""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Tuple

from ..errors import SimulationDrained


@dataclass(frozen=True)
class ExecutedEvent:
    tick: int
    instance: str
    kind: str
    seq_id: int


class VirtualClock:
    """Pending events ordered by ``(tick, instance order, insertion seq)``.

    ``instance order`` is a stable integer per instance, so simultaneous
    events run in ascending instance id and then in scheduling order.
    """

    def __init__(self):
        self.now = 0
        self._heap: List[Tuple[int, int, int, str, str, Callable, tuple]] = []
        self._seq = itertools.count()

    def schedule(self, tick: int, order: int, instance: str, kind: str,
                 fn: Callable, *args: Any) -> int:
        if tick < self.now:
            tick = self.now
        seq = next(self._seq)
        heapq.heappush(self._heap, (tick, order, seq, instance, kind, fn, args))
        return seq

    def pending(self) -> int:
        return len(self._heap)

    def peek_tick(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def step(self) -> ExecutedEvent:
        if not self._heap:
            raise SimulationDrained(f"no pending events at tick {self.now}")
        tick, _, seq, instance, kind, fn, args = heapq.heappop(self._heap)
        self.now = tick
        fn(*args)
        return ExecutedEvent(tick, instance, kind, seq)


def step(clock: VirtualClock) -> ExecutedEvent:
    return clock.step()
