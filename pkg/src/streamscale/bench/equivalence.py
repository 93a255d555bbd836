"""Compare a run against a reference run of the same job and workload."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

from ..runtime.trace import Trace

APPLY_KINDS = ("apply",)


@dataclass
class EquivalenceVerdict:
    per_key_state_equal: bool
    per_channel_order_equal: bool
    exactly_once: bool
    diffs: List[str] = field(default_factory=list)
    authoritative: bool = True

    @property
    def ok(self) -> bool:
        return self.per_key_state_equal and self.per_channel_order_equal and self.exactly_once

    def summary(self) -> str:
        flag = "" if self.authoritative else " (non-authoritative)"
        return (f"state={'ok' if self.per_key_state_equal else 'DIFF'} "
                f"order={'ok' if self.per_channel_order_equal else 'DIFF'} "
                f"exactly_once={'ok' if self.exactly_once else 'FAIL'}{flag}")


def applied(trace: Trace, op_id: str) -> List[Tuple[int, bytes, str]]:
    """``(seq_id, key, origin)`` of every record applied at instances of ``op_id``."""
    prefix = op_id + "#"
    return [(e.seq_id, e.detail["key"], e.detail["origin"]) for e in trace
            if e.kind in APPLY_KINDS and e.instance.startswith(prefix)]


def per_channel_order(rows) -> Dict[Tuple[bytes, str], List[int]]:
    out: Dict[Tuple[bytes, str], List[int]] = {}
    for seq, key, origin in rows:
        out.setdefault((key, origin), []).append(seq)
    return out


def _state_diffs(a: Dict[bytes, Any], b: Dict[bytes, Any], limit: int) -> List[str]:
    diffs = []
    for key in sorted(set(a) | set(b)):
        if a.get(key) != b.get(key):
            diffs.append(f"state {key!r}: {a.get(key)!r} != {b.get(key)!r}")
            if len(diffs) >= limit:
                break
    return diffs


def equivalence_check(run_a, run_b, op_id: str = "agg", limit: int = 20) -> EquivalenceVerdict:
    """Compare ``run_a`` (under test) against ``run_b`` (reference).

    Runs expose ``trace``, ``final_state`` (dict key -> value), ``emitted``
    (number of data records the sources produced) and ``authoritative``.
    """
    diffs: List[str] = []
    state_eq = run_a.final_state == run_b.final_state
    if not state_eq:
        diffs.extend(_state_diffs(run_a.final_state, run_b.final_state, limit))
    rows_a, rows_b = applied(run_a.trace, op_id), applied(run_b.trace, op_id)
    order_a, order_b = per_channel_order(rows_a), per_channel_order(rows_b)
    order_eq = order_a == order_b
    if not order_eq:
        for k in sorted(set(order_a) | set(order_b)):
            if order_a.get(k) != order_b.get(k):
                diffs.append(f"order {k!r} differs")
                if len(diffs) >= 2 * limit:
                    break
    once = True
    for name, run, rows in (("a", run_a, rows_a), ("b", run_b, rows_b)):
        counts = Counter(seq for seq, _, _ in rows)
        dup = [s for s, n in counts.items() if n > 1]
        if dup:
            once = False
            diffs.append(f"run {name}: {len(dup)} records applied more than once")
        if len(counts) != run.emitted:
            once = False
            diffs.append(f"run {name}: {len(counts)} distinct records applied, "
                         f"{run.emitted} emitted")
    if {s for s, _, _ in rows_a} != {s for s, _, _ in rows_b}:
        once = False
        diffs.append("applied record sets differ")
    return EquivalenceVerdict(state_eq, order_eq, once, diffs,
                              authoritative=getattr(run_a, "authoritative", True))
