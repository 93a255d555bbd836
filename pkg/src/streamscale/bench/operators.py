"""Deterministic operators used by the benchmark jobs.

Each keyed operator exposes a pure ``apply(value, record)`` step over the
state value of one key, so the runtime can run it against whichever store
currently holds that key.
"""
from __future__ import annotations

from typing import Any, Iterable, List, Optional, Tuple

from ..errors import MalformedRecord, WatermarkRegression

Output = Tuple[bytes, Any]


def _int_payload(payload: Any) -> int:
    if isinstance(payload, bool):
        raise MalformedRecord(f"payload {payload!r} is not an integer")
    if isinstance(payload, int):
        return payload
    if isinstance(payload, (bytes, bytearray)):
        try:
            return int(payload)
        except ValueError:
            raise MalformedRecord(f"payload {payload!r} is not an integer") from None
    raise MalformedRecord(f"payload {payload!r} is not an integer")


class KeyedAggregate:
    """Running per-key sum and count; emits ``(key, (sum, count))`` every ``emit_every`` records.

    ``field`` selects one element of tuple payloads, which lets an aggregator
    consume the output of another one.
    """

    windowed = False

    def __init__(self, emit_every: int = 1, state_bytes: int = 64, field: Optional[int] = None):
        if emit_every < 1:
            raise ValueError("emit_every must be >= 1")
        self.emit_every = emit_every
        self.state_bytes = state_bytes
        self.field = field

    def apply(self, value: Optional[Tuple[int, int]], key: bytes, payload: Any,
              event_time: int = 0) -> Tuple[Tuple[int, int], Optional[Output]]:
        if self.field is not None and isinstance(payload, tuple):
            try:
                payload = payload[self.field]
            except IndexError:
                raise MalformedRecord(f"payload {payload!r} has no field {self.field}") from None
        v = _int_payload(payload)
        total, count = value if value is not None else (0, 0)
        new = (total + v, count + 1)
        out = (key, new) if new[1] % self.emit_every == 0 else None
        return new, out

    @staticmethod
    def merge(a, b):
        if a is None:
            return b
        if b is None:
            return a
        return (a[0] + b[0], a[1] + b[1])


def keyed_aggregate(state: Optional[Tuple[int, int]], record, emit_every: int = 1):
    """Functional form over a record exposing ``key`` and ``payload``."""
    return KeyedAggregate(emit_every).apply(state, record.key, record.payload)


class SlidingWindow:
    """Per-key record count over sliding event-time windows ``[k*slide, k*slide+size)``.

    State per key is ``(fired_upto, ((start, count), ...))``; windows fire once
    the watermark reaches their end.  Records that fall only into already
    fired windows are dropped as late.
    """

    windowed = True

    def __init__(self, size: int = 10, slide: int = 5, state_bytes: int = 64):
        if size <= 0 or slide <= 0:
            raise ValueError("size and slide must be positive")
        self.size = size
        self.slide = slide
        self.state_bytes = state_bytes

    def window_starts(self, t: int) -> List[int]:
        first = max(0, (t - self.size) // self.slide + 1)
        return [k * self.slide for k in range(first, t // self.slide + 1)
                if k * self.slide <= t < k * self.slide + self.size]

    def apply(self, value, key: bytes, payload: Any, event_time: int = 0):
        fired_upto, panes = value if value is not None else (-1, ())
        counts = dict(panes)
        for start in self.window_starts(event_time):
            if start + self.size <= fired_upto:
                continue
            counts[start] = counts.get(start, 0) + 1
        return (fired_upto, tuple(sorted(counts.items()))), None

    def fire(self, value, key: bytes, wm: int):
        fired_upto, panes = value
        outs = []
        remaining = []
        for start, count in panes:
            if start + self.size <= wm:
                outs.append((key, (start, count)))
                fired_upto = max(fired_upto, start + self.size)
            else:
                remaining.append((start, count))
        if not outs:
            return value, outs
        return (fired_upto, tuple(remaining)), outs

    @staticmethod
    def merge(a, b):
        if a is None:
            return b
        if b is None:
            return a
        counts = dict(a[1])
        for start, c in b[1]:
            counts[start] = counts.get(start, 0) + c
        return (max(a[0], b[0]), tuple(sorted(counts.items())))


def sliding_window(records: Iterable[Tuple[bytes, int]], watermarks: Iterable[int],
                   size: int, slide: int) -> List[Output]:
    """Run a window operator over ``records`` then ``watermarks`` (single key space)."""
    op = SlidingWindow(size, slide)
    state = {}
    outs: List[Output] = []
    last = None
    for key, t in records:
        state[key], _ = op.apply(state.get(key), key, 1, t)
    for wm in watermarks:
        if last is not None and wm < last:
            raise WatermarkRegression(f"{wm} < {last}")
        last = wm
        for key in sorted(state):
            state[key], fired = op.fire(state[key], key, wm)
            outs.extend(fired)
    return outs


def make_operator(kind: str, params: dict):
    params = dict(params or {})
    if kind == "keyed_aggregate":
        return KeyedAggregate(**params)
    if kind == "sliding_window":
        return SlidingWindow(**params)
    raise ValueError(f"no keyed operator for kind {kind!r}")
