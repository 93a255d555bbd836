"""Discrete-event execution of a dataflow graph.

Every operator instance is a sequential loop: it selects one message, applies
its effects at the start tick, and stays busy for the message's processing
cost.  Channels deliver after ``latency_ticks`` (plus optional seeded jitter).
Scaling protocols plug in through :class:`InstanceHooks`, which can gate,
reorder or take over message handling on the instances of the scaling
operator.
"""
from __future__ import annotations

import random
import time
from collections import deque
from typing import Any, Callable, Deque, Dict, Iterable, List, Optional, Tuple

from ..errors import ProtocolError, StreamScaleError
from ..state import KeyedStateStore, RoutingTable, key_to_keygroup
from .channel import Channel
from .clock import VirtualClock
from .graph import DataflowGraph, JobSpec, build_graph
from .messages import (
    NON_CROSSABLE, MsgKind, SeqAllocator, StreamMessage,
)
from .trace import Trace

DATA = MsgKind.DATA
WATERMARK = MsgKind.WATERMARK
MARKER = MsgKind.LATENCY_MARKER
CKPT = MsgKind.CHECKPOINT_BARRIER

NEG_INF = -(1 << 62)
FINAL_WATERMARK = 1 << 62
CONTROLLER = -1
SCAN_WINDOW = 200


class OutRoute:
    """Outgoing side of one edge at one upstream instance."""

    __slots__ = ("dst_op", "partitioning", "targets", "table", "rr")

    def __init__(self, dst_op: str, partitioning: str):
        self.dst_op = dst_op
        self.partitioning = partitioning
        self.targets: List[Channel] = []
        self.table: Optional[RoutingTable] = None
        self.rr = 0


class SourceState:
    """Replay position of a source instance over its share of the workload."""

    def __init__(self, records: List[Tuple[int, bytes, Any]], marker_period: int,
                 watermark_period: int, end_tick: int):
        self.records = records
        self.pos = 0
        self.marker_period = marker_period
        self.watermark_period = watermark_period
        self.next_marker = marker_period if marker_period > 0 else None
        self.next_wm = watermark_period if watermark_period > 0 else None
        self.end_tick = end_tick
        self.final_sent = False
        self.halted = False
        self.emitted = 0
        self.markers = 0
        self.gen = 0

    def offsets(self) -> Dict[str, Any]:
        return {"pos": self.pos, "next_marker": self.next_marker, "next_wm": self.next_wm,
                "final_sent": self.final_sent, "emitted": self.emitted,
                "markers": self.markers}

    def restore(self, off: Dict[str, Any]) -> None:
        self.pos = off["pos"]
        self.next_marker = off["next_marker"]
        self.next_wm = off["next_wm"]
        self.final_sent = off["final_sent"]
        self.emitted = off["emitted"]
        self.markers = off["markers"]

    def next_tick(self) -> Optional[int]:
        cands = []
        if self.pos < len(self.records):
            cands.append(self.records[self.pos][0])
        if self.next_marker is not None and self.next_marker <= self.end_tick:
            cands.append(self.next_marker)
        if self.next_wm is not None and self.next_wm <= self.end_tick:
            cands.append(self.next_wm)
        if not cands:
            return None if self.final_sent else self.end_tick
        return min(cands)


class Instance:
    def __init__(self, sim: "Simulation", name: str, op_id: str, index: int, order: int):
        spec = sim.graph.op(op_id).spec
        self.sim = sim
        self.name = name
        self.op_id = op_id
        self.index = index
        self.order = order
        self.kind = spec.kind
        self.process_ticks = spec.process_ticks
        self.logic = None
        self.store: Optional[KeyedStateStore] = None
        self.inputs: List[Channel] = []
        self.routes: List[OutRoute] = []
        self.busy = False
        self.poll_scheduled = False
        self.rr = 0
        self.prio_queue: Deque[Tuple[StreamMessage, Channel]] = deque()
        self.path_inbox: Deque[StreamMessage] = deque()
        self.blocked: set = set()
        self.stalled_on: set = set()
        self.hooks: Optional["InstanceHooks"] = None
        self.waiting = False
        self.susp_since: Optional[int] = None
        self.ch_wm: Dict[int, int] = {}
        self.wm = NEG_INF
        self.last_ckpt = 0
        self.aligning: Dict[int, set] = {}
        self.seq = SeqAllocator(order)
        self.source: Optional[SourceState] = None
        self.sink_out: List[Tuple[bytes, Any]] = []
        self.samples: List[Tuple[int, int]] = []
        self.processed = 0
        self.closed = False

    @property
    def is_source(self) -> bool:
        return self.kind == "source"

    @property
    def is_sink(self) -> bool:
        return self.kind == "sink"

    @property
    def keyed(self) -> bool:
        return self.store is not None

    def pending_inputs(self) -> int:
        return sum(len(ch.inbox) for ch in self.inputs)

    def __repr__(self):
        return f"Instance({self.name})"


class InstanceHooks:
    """Protocol behaviour attached to instances of the scaling operator.

    Defaults reproduce plain FIFO processing, so subclasses only override
    the parts they change.
    """

    inter_channel = False
    intra_channel = False
    relaxed_watermarks = False
    scan_window = SCAN_WINDOW

    def processable(self, inst: Instance, msg: StreamMessage, ch: Channel) -> bool:
        return True

    def special(self, inst: Instance) -> Optional[StreamMessage]:
        """Work that bypasses channel selection (migration path items)."""
        return None

    def handle(self, inst: Instance, msg: StreamMessage, ch: Optional[Channel]) -> Optional[int]:
        """Take over handling of ``msg``; return its cost or None for default."""
        return None

    def can_fire(self, inst: Instance, kg: int) -> bool:
        return True

    def capture(self, inst: Instance, checkpoint_id: int) -> Optional[dict]:
        return None

    def on_aligned(self, inst: Instance, checkpoint_id: int) -> None:
        pass


class Simulation:
    """Virtual-time execution of one job over one workload."""

    def __init__(self, job: JobSpec, workload=None, trace_records: bool = True,
                 graph: Optional[DataflowGraph] = None):
        self.job = job
        self.graph = graph if graph is not None else build_graph(job)
        self.K = job.num_keygroups
        self.clock = VirtualClock()
        self.trace = Trace()
        self.trace_records = trace_records
        self.latency = job.latency_ticks
        self.jitter = job.jitter_ticks
        self.control_ticks = max(1, job.control_ticks)
        self.rng = random.Random(job.seed)
        self.instances: Dict[str, Instance] = {}
        self._order = 0
        self.workload = workload
        self.checkpoints = None
        self.listeners: List[Callable[[str, dict], None]] = []
        self.throughput: Dict[int, int] = {}
        self.throughput_bucket = 1000
        self.sessions: List[Any] = []
        for op_id in self.graph.topological_order():
            for name in self.graph.op(op_id).instance_ids:
                self._create_instance(op_id, name)
        self._refresh_wiring()
        for op_id in self.graph.operators:
            if self._is_keyed_op(op_id):
                owners = self.graph.owner_map(op_id)
                for inst in self.op_instances(op_id):
                    for kg, o in enumerate(owners):
                        if o == inst.index:
                            inst.store.adopt(kg)
        if workload is not None:
            self._attach_workload(workload)

    # construction helpers
    def _is_keyed_op(self, op_id: str) -> bool:
        return self.graph.op(op_id).kind in ("keyed_aggregate", "sliding_window")

    def _create_instance(self, op_id: str, name: str) -> Instance:
        from ..bench.operators import make_operator
        _, index = name.rsplit("#", 1)
        inst = Instance(self, name, op_id, int(index), self._order)
        self._order += 1
        node = self.graph.op(op_id)
        if node.kind in ("keyed_aggregate", "sliding_window"):
            inst.logic = make_operator(node.kind, node.spec.params)
            inst.store = KeyedStateStore(self.K)
        self.instances[name] = inst
        return inst

    def _refresh_wiring(self) -> None:
        g = self.graph
        for inst in self.instances.values():
            if inst.closed:
                continue
            chans = [ch for ch in g.inputs_of(inst.name) if not ch.closed]
            chans.sort(key=lambda c: self.instances[c.sender].order)
            inst.inputs = chans
            routes = []
            for e in g.out_edges(inst.op_id):
                r = OutRoute(e.dst, e.partitioning)
                r.targets = [g.channel(inst.name, d) for d in g.op(e.dst).instance_ids]
                if e.partitioning == "keyed":
                    r.table = g.routing[(inst.name, e.dst)]
                old = next((o for o in inst.routes if o.dst_op == e.dst), None)
                if old is not None:
                    r.rr = old.rr
                routes.append(r)
            inst.routes = routes

    def _attach_workload(self, workload) -> None:
        srcs = [i for i in self.instances.values() if i.is_source]
        shares: Dict[str, list] = {s.name: [] for s in srcs}
        for j, rec in enumerate(workload.records):
            shares[srcs[j % len(srcs)].name].append(rec)
        for s in srcs:
            s.source = SourceState(shares[s.name], workload.marker_period,
                                   workload.watermark_period, workload.duration)
            self._schedule_source(s, 0)

    # instance queries
    def op_instances(self, op_id: str) -> List[Instance]:
        names = self.graph.op(op_id).instance_ids
        return sorted((self.instances[n] for n in names), key=lambda i: i.index)

    def instance(self, name: str) -> Instance:
        return self.instances[name]

    def predecessors_of(self, op_id: str) -> List[Instance]:
        out = []
        for up in self.graph.predecessors(op_id):
            out.extend(self.op_instances(up))
        return out

    @property
    def now(self) -> int:
        return self.clock.now

    def emit_event(self, kind: str, **info) -> None:
        for fn in list(self.listeners):
            fn(kind, info)

    # scheduling
    def at(self, tick: int, fn: Callable, *args) -> None:
        """Run a controller action at ``tick`` before any instance work of that tick."""
        self.clock.schedule(tick, CONTROLLER, "controller", "control", fn, *args)

    def wake(self, inst: Instance) -> None:
        if inst.is_source:
            if inst.source is not None:
                self._schedule_source(inst, self.clock.now)
            return
        if not inst.busy and not inst.poll_scheduled:
            inst.poll_scheduled = True
            self.clock.schedule(self.clock.now, inst.order, inst.name, "poll", self._poll, inst)

    def run(self, until: Optional[int] = None, max_events: Optional[int] = None) -> int:
        n = 0
        clock = self.clock
        while clock.pending():
            if until is not None and clock.peek_tick() > until:
                clock.now = max(clock.now, until)
                break
            clock.step()
            n += 1
            if max_events is not None and n >= max_events:
                break
        return n

    def run_paced(self, seconds_per_tick: float = 0.001, until: Optional[int] = None) -> int:
        """Run against the wall clock: each tick lasts at least ``seconds_per_tick``."""
        start = time.monotonic()
        n = 0
        clock = self.clock
        while clock.pending():
            nxt = clock.peek_tick()
            if until is not None and nxt > until:
                break
            delay = start + nxt * seconds_per_tick - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            clock.step()
            n += 1
        return n

    # transport
    def _arrival(self, base: int) -> int:
        if self.jitter:
            base += self.rng.randint(0, self.jitter)
        return base

    def send(self, inst: Instance, ch: Channel, msg: StreamMessage) -> None:
        ch.output_cache.append(msg)
        self._pump(ch)
        if ch.cache_full():
            inst.stalled_on.add(ch)

    def send_wire(self, ch: Channel, msg: StreamMessage) -> None:
        """Put ``msg`` directly on the wire, ahead of the sender's output cache."""
        arrival = ch.put_wire(msg, self._arrival(self.clock.now + self.latency))
        recv = self.instances[ch.receiver]
        self.clock.schedule(arrival, recv.order, recv.name, "arrive", self._arrive, ch)

    def send_priority(self, ch: Channel, msg: StreamMessage) -> None:
        arrival = ch.put_priority(msg, self._arrival(self.clock.now + self.latency))
        recv = self.instances[ch.receiver]
        self.clock.schedule(arrival, recv.order, recv.name, "arrive", self._arrive, ch)

    def _pump(self, ch: Channel) -> None:
        cache = ch.output_cache
        if not cache:
            return
        room = ch.room()
        if room <= 0:
            return
        recv = self.instances[ch.receiver]
        now = self.clock.now
        last_sched = None
        while cache and room > 0:
            msg = cache.popleft()
            arrival = ch.put_wire(msg, self._arrival(now + self.latency))
            room -= 1
            if arrival != last_sched:
                self.clock.schedule(arrival, recv.order, recv.name, "arrive", self._arrive, ch)
                last_sched = arrival
        sender = self.instances.get(ch.sender)
        if sender is not None and ch in sender.stalled_on and not ch.cache_full():
            sender.stalled_on.discard(ch)
            if not sender.stalled_on:
                self.wake(sender)

    def _arrive(self, ch: Channel) -> None:
        if ch.closed:
            return
        if ch.arrive(self.clock.now):
            recv = self.instances[ch.receiver]
            while ch.prio_inbox:
                recv.prio_queue.append((ch.prio_inbox.popleft(), ch))
            self.wake(recv)

    def deliver_path(self, inst: Instance, msg: StreamMessage) -> None:
        inst.path_inbox.append(msg)
        self.wake(inst)

    def _taken(self, ch: Channel) -> None:
        if ch.output_cache:
            self._pump(ch)

    # routing
    def route_data(self, inst: Instance, msg: StreamMessage) -> None:
        for r in inst.routes:
            if r.partitioning == "keyed":
                if msg.kg < 0:
                    msg.kg = key_to_keygroup(msg.key, self.K)
                ch = r.targets[r.table.owner_of(msg.kg)]
            elif r.partitioning == "forward":
                ch = r.targets[inst.index % len(r.targets)]
            else:
                for ch in r.targets:
                    self.send(inst, ch, msg)
                continue
            self.send(inst, ch, msg)

    def route_marker(self, inst: Instance, msg: StreamMessage) -> None:
        for r in inst.routes:
            if r.partitioning == "keyed":
                ch = r.targets[r.rr % len(r.targets)]
                r.rr += 1
            else:
                ch = r.targets[inst.index % len(r.targets)]
            self.send(inst, ch, msg)

    def broadcast(self, inst: Instance, make: Callable[[], StreamMessage]) -> None:
        for r in inst.routes:
            for ch in r.targets:
                if not ch.closed:
                    self.send(inst, ch, make())

    # sources
    def _schedule_source(self, inst: Instance, tick: int) -> None:
        # only the most recently scheduled step stays live
        inst.source.gen += 1
        self.clock.schedule(tick, inst.order, inst.name, "source", self._source_step,
                            inst, inst.source.gen)

    def _source_step(self, inst: Instance, gen: int) -> None:
        src = inst.source
        if gen != src.gen or src.halted or inst.stalled_on:
            return
        now = self.clock.now
        recs = src.records
        bucket = now // self.throughput_bucket
        emitted = 0
        while not inst.stalled_on:
            nxt = src.next_tick()
            if nxt is None or nxt > now:
                break
            if src.pos < len(recs) and recs[src.pos][0] == nxt:
                tick, key, value = recs[src.pos]
                src.pos += 1
                msg = StreamMessage(DATA, key=key, payload=value, event_time=tick,
                                    seq_id=inst.seq.next(), origin=inst.name)
                self.route_data(inst, msg)
                src.emitted += 1
                emitted += 1
            elif src.next_marker is not None and src.next_marker == nxt:
                msg = StreamMessage(MARKER, event_time=nxt, seq_id=inst.seq.next(),
                                    origin=inst.name)
                src.next_marker += src.marker_period
                src.markers += 1
                self.route_marker(inst, msg)
            elif src.next_wm is not None and src.next_wm == nxt:
                ts = src.next_wm - 1
                src.next_wm += src.watermark_period
                self.broadcast(inst, lambda: StreamMessage(WATERMARK, event_time=ts,
                                                           seq_id=0, origin=inst.name))
            else:
                src.final_sent = True
                self.broadcast(inst, lambda: StreamMessage(WATERMARK, event_time=FINAL_WATERMARK,
                                                           origin=inst.name))
        if emitted:
            self.throughput[bucket] = self.throughput.get(bucket, 0) + emitted
            self.trace.add(now, inst.name, "emit", 0, {"count": emitted})
        if not inst.stalled_on:
            nxt = src.next_tick()
            if nxt is not None and nxt > now:
                self._schedule_source(inst, nxt)

    def halt_sources(self) -> None:
        for inst in self.instances.values():
            if inst.source is not None:
                inst.source.halted = True

    def resume_sources(self) -> None:
        for inst in self.instances.values():
            if inst.source is not None:
                inst.source.halted = False
                self.wake(inst)

    # instance loop
    def _poll(self, inst: Instance) -> None:
        inst.poll_scheduled = False
        if inst.busy or inst.closed:
            return
        now = self.clock.now
        while True:
            if inst.stalled_on:
                return
            sel = self._select(inst)
            if sel is None:
                if inst.hooks is not None:
                    self._track_suspension(inst, inst.waiting)
                return
            msg, ch = sel
            if ch is not None and inst.susp_since is not None:
                self._track_suspension(inst, False)
            cost = self._handle(inst, msg, ch)
            inst.processed += 1
            if cost > 0:
                inst.busy = True
                self.clock.schedule(now + cost, inst.order, inst.name, "done", self._done, inst)
                return

    def _done(self, inst: Instance) -> None:
        inst.busy = False
        self._poll(inst)

    def _track_suspension(self, inst: Instance, suspended: bool) -> None:
        now = self.clock.now
        if suspended and inst.susp_since is None:
            inst.susp_since = now
            self.trace.add(now, inst.name, "suspend_begin", 0, None)
        elif not suspended and inst.susp_since is not None:
            self.trace.add(now, inst.name, "suspend_end", 0,
                           {"span": now - inst.susp_since})
            inst.susp_since = None

    def close_suspension(self, inst: Instance) -> None:
        self._track_suspension(inst, False)

    def _select(self, inst: Instance):
        if inst.prio_queue:
            return inst.prio_queue.popleft()
        h = inst.hooks
        if h is None:
            return self._select_fifo(inst)
        msg = h.special(inst)
        if msg is not None:
            return msg, None
        return self.select_scheduled(inst, h)

    def _select_fifo(self, inst: Instance):
        inputs = inst.inputs
        n = len(inputs)
        blocked = inst.blocked
        start = inst.rr
        for off in range(n):
            i = (start + off) % n
            ch = inputs[i]
            if ch.inbox and ch.index not in blocked:
                inst.rr = (i + 1) % n
                msg = ch.inbox.popleft()
                self._taken(ch)
                return msg, ch
        return None

    def select_scheduled(self, inst: Instance, h: InstanceHooks):
        """Channel selection with processability gating and optional record scheduling."""
        inputs = inst.inputs
        n = len(inputs)
        blocked = inst.blocked
        gate = h.processable
        start = inst.rr
        stuck = []
        inst.waiting = False
        for off in range(n):
            i = (start + off) % n
            ch = inputs[i]
            if not ch.inbox or ch.index in blocked:
                continue
            head = ch.inbox[0]
            if gate(inst, head, ch):
                ch.inbox.popleft()
                inst.rr = (i + 1) % n
                self._taken(ch)
                return head, ch
            stuck.append(ch)
            if not h.inter_channel:
                break
        if not stuck:
            return None
        if h.intra_channel:
            crossing = NON_CROSSABLE - {WATERMARK} if h.relaxed_watermarks else NON_CROSSABLE
            for ch in stuck:
                box = ch.inbox
                limit = min(len(box), h.scan_window)
                for j in range(limit):
                    m = box[j]
                    if m.kind in crossing:
                        break
                    if m.kind is DATA and gate(inst, m, ch):
                        del box[j]
                        crossed = sum(1 for k in range(j) if box[k].kind is WATERMARK)
                        self.trace.add(self.clock.now, inst.name, "schedule_skip", m.seq_id,
                                       {"channel": ch.sender, "depth": j,
                                        "watermarks_crossed": crossed})
                        self._taken(ch)
                        return m, ch
        inst.waiting = True
        return None

    def _handle(self, inst: Instance, msg: StreamMessage, ch: Optional[Channel]) -> int:
        if ch is not None and msg.kind is DATA and inst.keyed \
                and msg.event_time < inst.ch_wm.get(ch.index, NEG_INF):
            # the channel's watermark was processed ahead of this record
            self.trace.add(self.clock.now, inst.name, "late_record", msg.seq_id,
                           {"channel": ch.sender, "event_time": msg.event_time,
                            "watermark": inst.ch_wm[ch.index]})
        h = inst.hooks
        if h is not None:
            cost = h.handle(inst, msg, ch)
            if cost is not None:
                return cost
        kind = msg.kind
        if inst.is_sink:
            return self._sink_handle(inst, msg, ch)
        if kind is DATA:
            self.apply_record(inst, msg)
            return inst.process_ticks
        if kind is WATERMARK:
            self.on_watermark(inst, msg, ch)
            return 0
        if kind is MARKER:
            self.route_marker(inst, msg)
            return 0
        if kind is CKPT:
            self.on_checkpoint_barrier(inst, msg, ch)
            return 0
        raise ProtocolError(f"{inst.name}: no handler for {msg!r}")

    def _sink_handle(self, inst: Instance, msg: StreamMessage, ch: Optional[Channel]) -> int:
        kind = msg.kind
        if kind is DATA:
            inst.sink_out.append((msg.key, msg.payload))
        elif kind is MARKER:
            lat = self.clock.now - msg.event_time
            inst.samples.append((self.clock.now, lat))
            self.trace.add(self.clock.now, inst.name, "marker", msg.seq_id,
                           {"latency": lat, "emitted": msg.event_time})
        elif kind is CKPT:
            self.on_checkpoint_barrier(inst, msg, ch)
        return 0

    # keyed processing
    def apply_record(self, inst: Instance, msg: StreamMessage, via: str = "apply") -> None:
        kg = msg.kg
        if kg < 0:
            kg = msg.kg = key_to_keygroup(msg.key, self.K)
        store = inst.store
        value = store.get(kg, msg.key)
        new, out = inst.logic.apply(value, msg.key, msg.payload, msg.event_time)
        store.put(kg, msg.key, new)
        if self.trace_records:
            self.trace.add(self.clock.now, inst.name, via, msg.seq_id,
                           {"key": msg.key, "origin": msg.origin, "kg": kg})
        if out is not None:
            self.emit_output(inst, out[0], out[1], msg.event_time)

    def emit_output(self, inst: Instance, key: bytes, value: Any, event_time: int) -> None:
        out = StreamMessage(DATA, key=key, payload=value, event_time=event_time,
                            seq_id=inst.seq.next(), origin=inst.name)
        self.route_data(inst, out)

    def on_watermark(self, inst: Instance, msg: StreamMessage, ch: Optional[Channel]) -> None:
        if ch is not None:
            prev = inst.ch_wm.get(ch.index, NEG_INF)
            if msg.event_time > prev:
                inst.ch_wm[ch.index] = msg.event_time
        low = min((inst.ch_wm.get(c.index, NEG_INF) for c in inst.inputs), default=NEG_INF)
        if low > inst.wm:
            inst.wm = low
            if inst.keyed and inst.logic.windowed:
                self.fire_windows(inst)
            self.broadcast(inst, lambda: StreamMessage(WATERMARK, event_time=low,
                                                       origin=inst.name))

    def fire_windows(self, inst: Instance, kgs: Optional[Iterable[int]] = None) -> None:
        if inst.wm == NEG_INF or not inst.logic.windowed:
            return
        h = inst.hooks
        store = inst.store
        for kg in (store.readable_keygroups() if kgs is None else kgs):
            if not store.readable(kg):
                continue
            if h is not None and not h.can_fire(inst, kg):
                continue
            entries = store.entries(kg)
            for key in sorted(entries):
                new, outs = inst.logic.fire(entries[key], key, inst.wm)
                if outs:
                    entries[key] = new
                    for k, v in outs:
                        self.emit_output(inst, k, v, v[0])

    # checkpoints
    def on_checkpoint_barrier(self, inst: Instance, msg: StreamMessage,
                              ch: Optional[Channel]) -> None:
        cid = msg.checkpoint_id
        if cid <= inst.last_ckpt:
            return
        seen = inst.aligning.setdefault(cid, set())
        if ch is not None:
            seen.add(ch.index)
            inst.blocked.add(ch.index)
        self.trace.add(self.clock.now, inst.name, "checkpoint_barrier", 0,
                       {"checkpoint": cid, "channel": ch.sender if ch else None})
        self.check_alignment(inst, cid)

    def check_alignment(self, inst: Instance, cid: int) -> None:
        seen = inst.aligning.get(cid)
        if seen is None:
            return
        expected = {c.index for c in inst.inputs if c.ckpt_floor <= cid}
        if not expected <= seen:
            return
        del inst.aligning[cid]
        for idx in seen:
            inst.blocked.discard(idx)
        inst.last_ckpt = cid
        self.trace.add(self.clock.now, inst.name, "checkpoint", 0, {"checkpoint": cid})
        if self.checkpoints is not None:
            self.checkpoints.capture(inst, cid)
        self.broadcast(inst, lambda: StreamMessage(CKPT, checkpoint_id=cid, origin=inst.name))
        if inst.hooks is not None:
            inst.hooks.on_aligned(inst, cid)
        self.wake(inst)

    # topology changes
    def add_instance(self, op_id: str) -> Instance:
        name = self.graph.add_instance(op_id)
        inst = self._create_instance(op_id, name)
        preds = self.predecessors_of(op_id)
        if preds:
            inst.last_ckpt = min(p.last_ckpt for p in preds)
        for ch in self.graph.inputs_of(name):
            ch.ckpt_floor = self.instances[ch.sender].last_ckpt + 1
        for ch in self.graph.outputs_of(name):
            ch.ckpt_floor = inst.last_ckpt + 1
        self._refresh_wiring()
        self.trace.add(self.clock.now, name, "deploy", 0, {"operator": op_id})
        return inst

    def remove_instance(self, inst: Instance) -> None:
        inst.closed = True
        self.graph.remove_instance(inst.op_id, inst.name)
        self._refresh_wiring()
        for other in self.instances.values():
            if not other.closed and other.keyed:
                self.wake(other)
        self.trace.add(self.clock.now, inst.name, "undeploy", 0, None)

    # results
    def final_state(self, op_id: str) -> Dict[bytes, Any]:
        out: Dict[bytes, Any] = {}
        for inst in self.op_instances(op_id):
            for kg, key, value in inst.store.items():
                if key in out:
                    raise StreamScaleError(f"key {key!r} readable at two instances")
                out[key] = value
        return out

    def sink_outputs(self) -> Dict[bytes, List[Any]]:
        out: Dict[bytes, List[Any]] = {}
        for inst in self.instances.values():
            if inst.is_sink:
                for key, value in inst.sink_out:
                    out.setdefault(key, []).append(value)
        return out

    def marker_samples(self) -> List[Tuple[int, int]]:
        out = []
        for inst in self.instances.values():
            if inst.is_sink:
                out.extend(inst.samples)
        return sorted(out)

    def emitted_counts(self) -> Dict[str, Tuple[int, int]]:
        """Per source: (producer index, records emitted)."""
        return {i.name: (i.order, i.source.emitted) for i in self.instances.values()
                if i.source is not None}

    def in_flight(self) -> int:
        return sum(ch.pending() for ch in self.graph.channels.values())

    def keyed_operators(self) -> List[str]:
        return [op for op in self.graph.operators if self._is_keyed_op(op)]
