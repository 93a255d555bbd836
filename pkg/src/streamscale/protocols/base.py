"""Shared protocol plumbing: migration paths and the protocol base class."""
from __future__ import annotations

import math
from collections import deque
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple

from ..runtime.engine import CONTROLLER, Instance, InstanceHooks, Simulation
from ..runtime.messages import MsgKind, StreamMessage
from ..state import StateChunk

PathItem = Tuple[StreamMessage, Instance]


class MigrationPath:
    """Point-to-point FIFO link for state chunks and rerouted traffic.

    Transmission is sequential: a chunk occupies the link for
    ``overhead + ceil(bytes / bandwidth)`` ticks; other items take no link
    time.  When the queue is empty and the link idle, ``feeder`` is asked
    for the next item, which keeps chunk extraction lazy.
    """

    def __init__(self, sim: Simulation, name: str, order: int, bandwidth: int = 512,
                 overhead: int = 1, feeder: Optional[Callable[[], Optional[PathItem]]] = None):
        self.sim = sim
        self.name = name
        self.order = order
        self.bandwidth = max(1, bandwidth)
        self.overhead = overhead
        self.feeder = feeder
        self.queue: Deque[PathItem] = deque()
        self.busy = False
        self.last_arrival = 0
        self.sent = 0
        self.closed = False

    def cost(self, msg: StreamMessage) -> int:
        if msg.kind is MsgKind.STATE_CHUNK:
            return self.overhead + math.ceil(msg.payload.size_bytes / self.bandwidth)
        return 0

    def send(self, msg: StreamMessage, dst: Instance) -> None:
        self.queue.append((msg, dst))
        self.kick()

    def idle(self) -> bool:
        return not self.busy and not self.queue

    def kick(self) -> None:
        sim = self.sim
        while not self.busy:
            if self.queue:
                msg, dst = self.queue.popleft()
            elif self.feeder is not None:
                item = self.feeder()
                if item is None:
                    return
                msg, dst = item
            else:
                return
            now = sim.clock.now
            dur = self.cost(msg)
            arrival = max(now + dur + sim.latency, self.last_arrival)
            self.last_arrival = arrival
            self.sent += 1
            sim.clock.schedule(arrival, dst.order, dst.name, "path", sim.deliver_path, dst, msg)
            if dur > 0:
                self.busy = True
                sim.clock.schedule(now + dur, self.order, self.name, "link_free", self._free)

    def _free(self) -> None:
        self.busy = False
        self.kick()


def chunk_message(chunk: StateChunk, seq_id: int = 0) -> StreamMessage:
    return StreamMessage(MsgKind.STATE_CHUNK, payload=chunk, subscale_id=chunk.subscale_id,
                         seq_id=seq_id, kg=chunk.keygroup)


class ScalingProtocol(InstanceHooks):
    """Base class for one protocol executing one scaling session.

    The protocol object doubles as the hook set of every instance of the
    scaling operator for the lifetime of the session.
    """

    name = "base"
    authoritative = True
    defers_checkpoints = True

    def __init__(self, sim: Simulation, session, coordinator, bandwidth: int = 512,
                 chunk_overhead: int = 1, **options):
        self.sim = sim
        self.session = session
        self.coordinator = coordinator
        self.op_id = session.operator_id
        self.plan = session.plan
        self.bandwidth = bandwidth
        self.chunk_overhead = chunk_overhead
        self.options = options
        self.entry_bytes = 64
        self.migrations_per_kg: Dict[int, int] = {}

    # helpers
    @property
    def now(self) -> int:
        return self.sim.clock.now

    def instances(self) -> List[Instance]:
        return self.sim.op_instances(self.op_id)

    def inst_at(self, index: int) -> Instance:
        return self.sim.op_instances(self.op_id)[index]

    def predecessors(self) -> List[Instance]:
        return self.sim.predecessors_of(self.op_id)

    def table_of(self, pred: Instance):
        return self.sim.graph.routing[(pred.name, self.op_id)]

    def install_hooks(self) -> None:
        for inst in self.instances():
            inst.hooks = self
            if inst.logic is not None:
                self.entry_bytes = getattr(inst.logic, "state_bytes", self.entry_bytes)

    def trace(self, inst: str, kind: str, seq: int = 0, **detail) -> None:
        self.sim.trace.add(self.now, inst, kind, seq, detail or None)

    def path(self, name: str, order: int, feeder=None) -> MigrationPath:
        return MigrationPath(self.sim, name, order, self.bandwidth, self.chunk_overhead, feeder)

    def record_migration(self, kg: int) -> None:
        self.migrations_per_kg[kg] = self.migrations_per_kg.get(kg, 0) + 1

    def emit_chunk(self, src: Instance, kg: int, sid: int, target: Instance) -> StreamMessage:
        chunk = src.store.emit_chunk(kg, sid, src.name, target.name, self.entry_bytes)
        self.record_migration(kg)
        self.trace(src.name, "chunk", 0, subscale=sid, kg=kg, target=target.name,
                   bytes=chunk.size_bytes)
        return chunk_message(chunk)

    def done(self) -> None:
        self.coordinator.protocol_done(self.session)

    def fire_after(self, inst: Instance, kgs) -> None:
        """Fire windows that were held back for ``kgs`` now that they settled."""
        if inst.logic is not None and inst.logic.windowed:
            self.sim.fire_windows(inst, kgs)

    # lifecycle, overridden per protocol
    def start(self) -> None:
        raise NotImplementedError

    def terminate(self) -> None:
        """Stop starting new work; in-flight work drains."""

    def is_done(self) -> bool:
        raise NotImplementedError

    def cleanup(self) -> None:
        pass

    def metrics(self) -> Dict[str, Any]:
        return {"migrations_per_kg": dict(self.migrations_per_kg)}
