"""Synchronisation-free scaling that gives up correctness.

Routing switches instantly and state streams immediately.  Any instance
processes any record: if the key-group is not locally readable, the record
updates a local stand-in entry, which is merged into the real state if that
key-group later arrives.  Stand-ins left at the old owner are lost.
"""
from __future__ import annotations

from typing import Any, Dict, Optional

from ..runtime.messages import MsgKind
from ..state import key_to_keygroup
from .base import ScalingProtocol


class Unbound(ScalingProtocol):
    name = "unbound"
    authoritative = False
    defers_checkpoints = True

    def __init__(self, sim, session, coordinator, **options):
        super().__init__(sim, session, coordinator, **options)
        self.sid = -session.session_id
        self.universal: Dict[str, Dict[int, Dict[bytes, Any]]] = {}
        self.installed = set()
        self.queues: Dict[int, list] = {}
        self.lost_entries = 0

    def start(self) -> None:
        self.install_hooks()
        migrations = self.plan.migrations
        if not migrations:
            return
        update = {kg: tgt for kg, _, tgt in migrations}
        self.trace("controller", "inject", self.sid, kgs=sorted(update), protocol=self.name)
        for pred in self.predecessors():
            self.table_of(pred).apply_update(update)
        for kg, src, _ in migrations:
            self.queues.setdefault(src, []).append(kg)
        for src, kgs in sorted(self.queues.items()):
            inst = self.inst_at(src)
            kgs.sort()
            inst.store.begin_extraction(kgs)
            link = self.path(f"link{inst.name}", inst.order, self._feeder(inst, kgs, update))
            link.kick()

    def _feeder(self, inst, kgs, update):
        def feed():
            if not kgs:
                return None
            kg = kgs.pop(0)
            target = self.inst_at(update[kg])
            return self.emit_chunk(inst, kg, self.sid, target), target
        return feed

    def is_done(self) -> bool:
        return len(self.installed) == len(self.plan.migrations) and not self._stragglers()

    def _stragglers(self) -> bool:
        """Records still headed for an instance that no longer holds their key-group."""
        moved = {kg for kg, _, _ in self.plan.migrations}
        for inst in self.instances():
            for ch in inst.inputs:
                msgs = list(ch.output_cache) + [m for _, m in ch.wire] + list(ch.inbox)
                for m in msgs:
                    if m.kind is not MsgKind.DATA:
                        continue
                    kg = m.kg if m.kg >= 0 else key_to_keygroup(m.key, self.sim.K)
                    if kg in moved and not inst.store.readable(kg):
                        return True
        return False

    def _poll_done(self) -> None:
        if self.is_done():
            self.done()
        else:
            self.sim.at(self.now + 1, self._poll_done)

    def cleanup(self) -> None:
        for name, per_kg in self.universal.items():
            self.lost_entries += sum(len(v) for v in per_kg.values())
        self.universal.clear()

    def special(self, inst):
        if inst.path_inbox:
            return inst.path_inbox.popleft()
        return None

    def handle(self, inst, msg, ch) -> Optional[int]:
        if ch is None:
            chunk = msg.payload
            kg = chunk.keygroup
            inst.store.install_chunk(chunk)
            local = self.universal.get(inst.name, {}).pop(kg, None)
            if local:
                entries = inst.store.entries(kg)
                for key, value in local.items():
                    entries[key] = inst.logic.merge(entries.get(key), value)
            inst.store.activate(kg)
            self.installed.add(kg)
            self.trace(inst.name, "activate", self.sid, kg=kg)
            if len(self.installed) == len(self.plan.migrations):
                self.sim.at(self.now, self._poll_done)
            return self.sim.control_ticks
        if msg.kind is MsgKind.DATA:
            kg = msg.kg
            if kg < 0:
                kg = msg.kg = key_to_keygroup(msg.key, self.sim.K)
            if inst.store.readable(kg):
                return None
            per_kg = self.universal.setdefault(inst.name, {}).setdefault(kg, {})
            new, out = inst.logic.apply(per_kg.get(msg.key), msg.key, msg.payload,
                                        msg.event_time)
            per_kg[msg.key] = new
            self.sim.trace.add(self.now, inst.name, "apply", msg.seq_id,
                               {"key": msg.key, "origin": msg.origin, "kg": kg,
                                "universal": True})
            if out is not None:
                self.sim.emit_output(inst, out[0], out[1], msg.event_time)
            return inst.process_ticks
        return None

    def metrics(self):
        out = super().metrics()
        out["lost_entries"] = self.lost_entries
        return out
