"""Post-hoc scaling metrics computed from an event trace.

Overhead decomposition per run:

* ``L_p`` -- per subscale, ticks from injection to its first chunk, summed;
* ``L_d`` -- mean over migrating key-groups of ticks from injection to chunk;
* ``L_s`` -- suspension spans at the scaling instances, summed;
* ``L_total`` -- ticks from session start to session end, summed over sessions;
* ``L_o`` -- whatever is left, so the four parts always add up to the total.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Tuple

from ..errors import IncompleteTrace
from ..runtime.trace import Trace, TraceEvent

# L_d is rounded to a dyadic fraction so the residual identity is exact in floats
_GRID = 1024


@dataclass
class MetricsReport:
    L_total: float = 0
    L_p: float = 0
    L_s: float = 0
    L_d: float = 0
    L_o: float = 0
    latency_series: List[Tuple[int, int]] = field(default_factory=list)
    throughput_series: List[Tuple[int, int]] = field(default_factory=list)
    scaling_duration: int = 0
    peak_latency: int = 0
    avg_latency: float = 0.0
    pre_scaling_latency: float = 0.0
    migrations_per_kg: Dict[int, int] = field(default_factory=dict)
    sub_migrations: Dict[str, int] = field(default_factory=dict)
    reroute_count: int = 0
    suspension_events: List[Tuple[str, int, int]] = field(default_factory=list)
    scaling_start: Optional[int] = None
    scaling_end: Optional[int] = None

    @property
    def migrations(self) -> int:
        return sum(self.migrations_per_kg.values())

    def residual_ok(self) -> bool:
        return self.L_p + self.L_s + self.L_d + self.L_o == self.L_total

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["migrations_per_kg"] = {str(k): v for k, v in sorted(self.migrations_per_kg.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _suspensions(events: Iterable[TraceEvent], end: int) -> List[Tuple[str, int, int]]:
    open_at: Dict[str, int] = {}
    spans = []
    for e in events:
        if e.kind == "suspend_begin":
            open_at[e.instance] = e.tick
        elif e.kind == "suspend_end" and e.instance in open_at:
            spans.append((e.instance, open_at.pop(e.instance), e.tick))
    for inst, t in sorted(open_at.items()):
        spans.append((inst, t, end))
    return spans


def _scaling_duration(samples: List[Tuple[int, int]], start: int, pre: float,
                      threshold: float, stab_window: int, slack: float) -> int:
    """Ticks from ``start`` until latency stays under the bound for ``stab_window`` ticks."""
    bound = max(pre * threshold, pre + slack)
    after = [(t, lat) for t, lat in samples if t >= start]
    if not after:
        return 0
    candidate = None
    for t, lat in after:
        if lat > bound:
            candidate = None
            continue
        if candidate is None:
            candidate = t
        if t - candidate >= stab_window:
            return candidate - start
    if candidate is not None:
        return candidate - start
    return after[-1][0] - start


def compute_metrics(trace: Trace, stab_window: int = 2000, threshold: float = 1.10,
                    slack: float = 1.0) -> MetricsReport:
    """Build a :class:`MetricsReport` from a complete run trace.

    ``slack`` is an absolute floor (in ticks) added to the stabilisation
    bound so that single-tick jitter on small latencies does not count as
    instability.
    """
    events = list(trace)
    end = events[-1].tick if events else 0
    report = MetricsReport()
    starts: Dict[int, TraceEvent] = {}
    ends: Dict[int, int] = {}
    injects: Dict[int, int] = {}
    first_chunk: Dict[int, int] = {}
    kg_chunk: Dict[int, Tuple[int, int]] = {}
    sub_counts: Dict[Tuple[int, int], int] = {}
    samples: List[Tuple[int, int]] = []
    emitted: Dict[int, int] = {}
    for e in events:
        k = e.kind
        if k == "marker":
            samples.append((e.tick, e.detail["latency"]))
        elif k == "emit":
            emitted[e.tick // 1000] = emitted.get(e.tick // 1000, 0) + e.detail["count"]
        elif k == "session_start":
            starts[e.seq_id] = e
        elif k == "session_end":
            ends[e.seq_id] = e.tick
        elif k == "inject":
            injects.setdefault(e.seq_id, e.tick)
        elif k == "chunk":
            d = e.detail
            sid = d["subscale"]
            first_chunk.setdefault(sid, e.tick)
            kg_chunk.setdefault(d["kg"], (sid, e.tick))
            key = (d["kg"], d.get("sub", 0))
            sub_counts[key] = sub_counts.get(key, 0) + 1
        elif k == "reroute":
            report.reroute_count += 1
    for sid, ev in starts.items():
        if sid not in ends:
            raise IncompleteTrace(f"session {sid} never ended")
        if ev.detail.get("migrating") and not injects:
            raise IncompleteTrace(f"session {sid} migrates state but has no injection")
    for sid in first_chunk:
        if sid not in injects:
            raise IncompleteTrace(f"chunk of subscale {sid} without injection")
    report.L_total = sum(ends[s] - ev.tick for s, ev in starts.items())
    report.L_p = sum(first_chunk[s] - injects[s] for s in first_chunk)
    if kg_chunk:
        mean = sum(t - injects[sid] for sid, t in kg_chunk.values()) / len(kg_chunk)
        report.L_d = round(mean * _GRID) / _GRID
    spans = _suspensions(events, end)
    report.suspension_events = spans
    report.L_s = sum(b - a for _, a, b in spans)
    report.L_o = report.L_total - report.L_p - report.L_s - report.L_d
    for (kg, sub), n in sorted(sub_counts.items()):
        report.migrations_per_kg[kg] = max(report.migrations_per_kg.get(kg, 0), n)
        report.sub_migrations[f"{kg}.{sub}"] = n
    report.latency_series = samples
    report.throughput_series = sorted((b * 1000, n) for b, n in emitted.items())
    if starts:
        start = min(ev.tick for ev in starts.values())
        report.scaling_start = start
        report.scaling_end = max(ends.values())
        pre = [lat for t, lat in samples if t < start]
        report.pre_scaling_latency = sum(pre) / len(pre) if pre else 0.0
        window = [lat for t, lat in samples if t >= start]
        report.scaling_duration = _scaling_duration(samples, start, report.pre_scaling_latency,
                                                    threshold, stab_window, slack)
    else:
        window = [lat for _, lat in samples]
    if window:
        report.peak_latency = max(window)
        report.avg_latency = sum(window) / len(window)
    return report
