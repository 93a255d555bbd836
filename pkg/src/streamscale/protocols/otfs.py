"""Barrier-synchronised on-the-fly scaling with fluid or all-at-once migration.

A single coupled barrier follows the data through every predecessor's output
cache.  Each old instance blocks a channel once its barrier arrives and,
when aligned, streams its outgoing key-groups in ascending order over one
sequential link.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Set

from ..errors import ProtocolError
from ..runtime.engine import Instance
from ..runtime.messages import MsgKind, StreamMessage
from ..state import KgStatus, key_to_keygroup
from .base import ScalingProtocol

_READY = (KgStatus.LOCAL, KgStatus.MIGRATING_OUT, KgStatus.ACTIVE)


class FluidOTFS(ScalingProtocol):
    name = "fluid"
    all_at_once = False

    def __init__(self, sim, session, coordinator, scheduling: bool = False,
                 scan_window: int = 200, **options):
        super().__init__(sim, session, coordinator, **options)
        # the schedule buffer exists either way; only the policy is switched
        self.inter_channel = scheduling
        self.intra_channel = scheduling
        self.scan_window = scan_window
        self.sid = -session.session_id
        self.outgoing: Dict[int, List[int]] = {}
        self.kg_target: Dict[int, int] = {}
        self.seen: Dict[str, Set[str]] = {}
        self.old: List[Instance] = []
        self.preds: List[str] = []
        self.installed: Set[int] = set()
        self.active: Set[int] = set()
        self.links = {}
        self.queues: Dict[int, List[int]] = {}
        self.injected_at: Optional[int] = None
        self.first_chunk: Optional[int] = None

    def start(self) -> None:
        self.install_hooks()
        migrations = self.plan.migrations
        if not migrations:
            return
        sim = self.sim
        for kg, src, tgt in migrations:
            self.outgoing.setdefault(src, []).append(kg)
            self.kg_target[kg] = tgt
        self.old = [i for i in self.instances() if i.name not in self.session.new_instances]
        preds = self.predecessors()
        self.preds = [p.name for p in preds]
        self.injected_at = self.now
        self.trace("controller", "inject", self.sid, kgs=sorted(self.kg_target),
                   protocol=self.name)
        update = dict(self.kg_target)
        for pred in preds:
            self.table_of(pred).apply_update(update)
            for inst in self.old:
                ch = sim.graph.channel(pred.name, inst.name)
                barrier = StreamMessage(MsgKind.CONFIRM_BARRIER, subscale_id=self.sid,
                                        seq_id=pred.seq.next_control(), extra={"coupled": True})
                sim.send(pred, ch, barrier)

    def is_done(self) -> bool:
        return len(self.active) == len(self.kg_target)

    # migration
    def _feeder(self, src: Instance):
        queue = self.queues[src.index]

        def feed():
            if not queue:
                return None
            kg = queue.pop(0)
            target = self.inst_at(self.kg_target[kg])
            msg = self.emit_chunk(src, kg, self.sid, target)
            if self.first_chunk is None:
                self.first_chunk = self.now
            return msg, target
        return feed

    def _aligned(self, inst: Instance) -> None:
        self.trace(inst.name, "aligned", self.sid)
        kgs = sorted(self.outgoing.get(inst.index, []))
        if not kgs:
            return
        inst.store.begin_extraction(kgs)
        self.queues[inst.index] = list(kgs)
        link = self.path(f"link{inst.name}", inst.order, self._feeder(inst))
        self.links[inst.index] = link
        link.kick()

    def _activate(self, inst: Instance, kg: int) -> None:
        inst.store.activate(kg)
        self.active.add(kg)
        self.trace(inst.name, "activate", self.sid, kg=kg)

    def _activate_all(self) -> None:
        for kg in sorted(self.installed - self.active):
            self._activate(self.inst_at(self.kg_target[kg]), kg)
        for inst in self.instances():
            self.sim.wake(inst)
        self.done()

    # hooks
    def processable(self, inst, msg, ch) -> bool:
        if msg.kind is MsgKind.DATA:
            kg = msg.kg
            if kg < 0:
                kg = msg.kg = key_to_keygroup(msg.key, self.sim.K)
            return inst.store.status(kg) in _READY
        return True

    def special(self, inst):
        if inst.path_inbox:
            return inst.path_inbox.popleft()
        return None

    def handle(self, inst, msg, ch) -> Optional[int]:
        kind = msg.kind
        if ch is None:
            if kind is not MsgKind.STATE_CHUNK:
                raise ProtocolError(f"unexpected path item {msg!r}")
            chunk = msg.payload
            inst.store.install_chunk(chunk)
            self.installed.add(chunk.keygroup)
            self.trace(inst.name, "chunk_install", self.sid, kg=chunk.keygroup)
            if not self.all_at_once:
                self._activate(inst, chunk.keygroup)
                if self.is_done():
                    self.sim.at(self.now, self.done)
            elif len(self.installed) == len(self.kg_target):
                self.sim.at(self.now, self._activate_all)
            return self.sim.control_ticks
        if kind is MsgKind.CONFIRM_BARRIER and (msg.extra or {}).get("coupled"):
            seen = self.seen.setdefault(inst.name, set())
            seen.add(ch.sender)
            inst.blocked.add(ch.index)
            self.trace(inst.name, "confirm", self.sid, channel=ch.sender)
            if seen >= set(self.preds):
                for c in inst.inputs:
                    if c.sender in seen:
                        inst.blocked.discard(c.index)
                self._aligned(inst)
            return self.sim.control_ticks
        if kind is MsgKind.DATA and inst.store.status(msg.kg) is KgStatus.MIGRATED_OUT:
            raise ProtocolError(f"{inst.name}: record for migrated key-group {msg.kg}")
        return None


class AllAtOnce(FluidOTFS):
    name = "all_at_once"
    all_at_once = True
