"""Append-only event trace, serialisable as JSON lines."""
from __future__ import annotations

import json
from typing import Any, Dict, Iterable, Iterator, List, NamedTuple, Optional


class TraceEvent(NamedTuple):
    tick: int
    instance: str
    kind: str
    seq_id: int
    detail: Optional[Dict[str, Any]]

    def to_json(self) -> str:
        return json.dumps({
            "tick": self.tick, "instance": self.instance, "kind": self.kind,
            "seq_id": self.seq_id, "detail": self.detail or {},
        }, sort_keys=True, default=_default)


def _default(obj):
    if isinstance(obj, bytes):
        return obj.decode("latin-1")
    if isinstance(obj, (set, frozenset, tuple)):
        return sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
    raise TypeError(f"unserialisable trace detail {obj!r}")


class Trace:
    def __init__(self):
        self.events: List[TraceEvent] = []

    def add(self, tick: int, instance: str, kind: str, seq_id: int = 0,
            detail: Optional[Dict[str, Any]] = None) -> None:
        self.events.append(TraceEvent(tick, instance, kind, seq_id, detail))

    def __len__(self):
        return len(self.events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def of_kind(self, *kinds: str) -> List[TraceEvent]:
        wanted = set(kinds)
        return [e for e in self.events if e.kind in wanted]

    def lines(self) -> Iterator[str]:
        for e in self.events:
            yield e.to_json()

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "Trace":
        trace = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    trace.add(row["tick"], row["instance"], row["kind"], row["seq_id"],
                              row["detail"] or None)
        return trace
