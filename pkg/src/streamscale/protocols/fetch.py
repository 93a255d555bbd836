"""Pull-based migration of sub-key-groups.

Routing switches at once and one sync barrier per predecessor travels to the
old owners.  Each migrating key-group is split into ``fanout`` sub-key-groups
that move only when an instance needs them: the instance asks the current
holder, which hands the fragment over unless its own next records need it.
Old owners keep serving records that precede the barrier, so a hot fragment
can bounce between old and new owner several times.  Leftover fragments are
pushed to their final owner once an old owner has seen every barrier.
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional, Set, Tuple

from ..errors import ProtocolError
from ..runtime.engine import Instance
from ..runtime.messages import MsgKind, StreamMessage
from ..state import KgStatus, StateChunk, fnv1a64, key_to_keygroup
from .base import ScalingProtocol

SubKey = Tuple[int, int]


class FetchOnDemand(ScalingProtocol):
    name = "fetch_on_demand"

    def __init__(self, sim, session, coordinator, fanout: int = 4, retry: int = 20, **options):
        super().__init__(sim, session, coordinator, **options)
        if fanout < 1:
            raise ValueError("fanout must be >= 1")
        self.fanout = fanout
        self.retry = retry
        self.retry_at: Dict[str, int] = {}
        self.sid = -session.session_id
        self.moving: Dict[int, Tuple[int, int]] = {}
        self.holder: Dict[SubKey, Optional[str]] = {}
        self.fragments: Dict[SubKey, Dict[bytes, Any]] = {}
        self.requested: Dict[SubKey, Dict[str, int]] = {}
        self.parked: Dict[str, List[Tuple[SubKey, str]]] = {}
        self.seen: Dict[str, Set[str]] = {}
        self.notified: Dict[str, Set[Tuple[int, str]]] = {}
        self.aligned: Set[int] = set()
        self.preds: List[str] = []
        self.sub_migrations: Dict[SubKey, int] = {}
        self.links: Dict[str, Any] = {}
        self.finished = False

    def sub_of(self, key: bytes) -> int:
        return (fnv1a64(key) // self.sim.K) % self.fanout

    def start(self) -> None:
        self.install_hooks()
        sim = self.sim
        if not self.plan.migrations:
            self.finished = True
            return
        sources = set()
        for kg, src, tgt in self.plan.migrations:
            self.moving[kg] = (src, tgt)
            sources.add(src)
            inst = self.inst_at(src)
            inst.store.begin_extraction([kg])
            chunk = inst.store.emit_chunk(kg, self.sid, inst.name, None, self.entry_bytes)
            for u in range(self.fanout):
                self.holder[(kg, u)] = inst.name
                self.fragments[(kg, u)] = {}
            for key, value in chunk.entries.items():
                self.fragments[(kg, self.sub_of(key))][key] = value
        self.trace("controller", "inject", self.sid, kgs=sorted(self.moving),
                   protocol=self.name)
        preds = self.predecessors()
        self.preds = [p.name for p in preds]
        update = {kg: tgt for kg, (_, tgt) in self.moving.items()}
        for pred in preds:
            self.table_of(pred).apply_update(update)
            for src in sorted(sources):
                ch = sim.graph.channel(pred.name, self.inst_at(src).name)
                barrier = StreamMessage(MsgKind.CONFIRM_BARRIER, subscale_id=self.sid,
                                        seq_id=pred.seq.next_control(), extra={"sync": True})
                sim.send(pred, ch, barrier)

    def is_done(self) -> bool:
        return self.finished

    # transport
    def _link(self, inst: Instance):
        link = self.links.get(inst.name)
        if link is None:
            link = self.links[inst.name] = self.path(f"fetch{inst.name}", inst.order)
        return link

    def _control(self, dst: Instance, msg: StreamMessage) -> None:
        sim = self.sim
        sim.clock.schedule(self.now + sim.latency, dst.order, dst.name, "path",
                           sim.deliver_path, dst, msg)

    def _transfer(self, src: Instance, sub: SubKey, dst: Instance) -> None:
        kg, u = sub
        entries = self.fragments[sub]
        self.holder[sub] = None
        self.sub_migrations[sub] = self.sub_migrations.get(sub, 0) + 1
        self.record_migration(kg)
        chunk = StateChunk(self.sid, kg, entries, src.name, dst.name,
                           size_bytes=len(entries) * self.entry_bytes)
        msg = StreamMessage(MsgKind.STATE_CHUNK, payload=chunk, subscale_id=self.sid, kg=kg,
                            extra={"sub": u})
        self.trace(src.name, "chunk", 0, subscale=self.sid, kg=kg, sub=u, target=dst.name)
        self._link(src).send(msg, dst)

    def _request(self, inst: Instance, sub: SubKey) -> None:
        asks = self.requested.setdefault(sub, {})
        issued = asks.get(inst.name)
        if issued is not None and self.now - issued < self.retry:
            return
        asks[inst.name] = self.now
        self._wake_later(inst)
        self.trace(inst.name, "fetch", 0, kg=sub[0], sub=sub[1])
        holder = self.holder.get(sub)
        if holder is not None:
            req = StreamMessage(MsgKind.TRIGGER_BARRIER, subscale_id=self.sid,
                                extra={"fetch": sub, "requester": inst.name})
            self._control(self.sim.instance(holder), req)

    def _wake_later(self, inst: Instance) -> None:
        # requests can be overtaken by a moving fragment; re-evaluate periodically
        due = self.now + self.retry
        if self.retry_at.get(inst.name, -1) >= self.now:
            return
        self.retry_at[inst.name] = due
        self.sim.clock.schedule(due, inst.order, inst.name, "retry", self.sim.wake, inst)

    # per-record eligibility
    def _eligible(self, inst: Instance, msg: StreamMessage, ch) -> bool:
        src, tgt = self.moving[msg.kg]
        if inst.index == src:
            return True
        if inst.index == tgt:
            return (src, ch.sender) in self.notified.get(inst.name, ())
        raise ProtocolError(f"{inst.name} received record for key-group {msg.kg}")

    def _needs(self, inst: Instance, sub: SubKey) -> bool:
        for ch in inst.inputs:
            if ch.inbox and ch.index not in inst.blocked:
                m = ch.inbox[0]
                if m.kind is MsgKind.DATA and m.kg == sub[0] and self.sub_of(m.key) == sub[1] \
                        and self._eligible(inst, m, ch):
                    return True
        return False

    def _serve(self, inst: Instance) -> None:
        waiting = self.parked.get(inst.name)
        if not waiting:
            return
        keep = []
        done = set()
        for sub, requester in waiting:
            if self.holder.get(sub) != inst.name or (sub, requester) in done:
                continue
            if self._needs(inst, sub):
                keep.append((sub, requester))
            else:
                done.add((sub, requester))
                self._transfer(inst, sub, self.sim.instance(requester))
        self.parked[inst.name] = keep

    def _final_owner(self, sub: SubKey) -> Instance:
        return self.inst_at(self.moving[sub[0]][1])

    def _push_leftovers(self, inst: Instance) -> None:
        if inst.index not in self.aligned:
            return
        for sub in sorted(self.holder):
            if self.holder[sub] == inst.name and self._final_owner(sub) is not inst:
                self._transfer(inst, sub, self._final_owner(sub))

    def _check_finished(self) -> None:
        if self.finished:
            return
        sources = {src for src, _ in self.moving.values()}
        if not sources <= self.aligned:
            return
        for sub, h in self.holder.items():
            if h is None or h != self._final_owner(sub).name:
                return
        for kg in sorted(self.moving):
            tgt = self.inst_at(self.moving[kg][1])
            entries = {}
            for u in range(self.fanout):
                entries.update(self.fragments[(kg, u)])
            tgt.store.install_chunk(StateChunk(self.sid, kg, entries, None, tgt.name))
            tgt.store.activate(kg)
            self.trace(tgt.name, "activate", self.sid, kg=kg)
        self.finished = True
        self.sim.at(self.now, self.done)

    # hooks
    def processable(self, inst, msg, ch) -> bool:
        if msg.kind is not MsgKind.DATA:
            return True
        kg = msg.kg
        if kg < 0:
            kg = msg.kg = key_to_keygroup(msg.key, self.sim.K)
        if kg not in self.moving or self.finished:
            return inst.store.readable(kg)
        if not self._eligible(inst, msg, ch):
            return False
        sub = (kg, self.sub_of(msg.key))
        if self.holder.get(sub) == inst.name:
            return True
        self._request(inst, sub)
        return False

    def special(self, inst):
        self._serve(inst)
        if inst.path_inbox:
            return inst.path_inbox.popleft()
        return None

    def can_fire(self, inst, kg) -> bool:
        return kg not in self.moving or self.finished

    def handle(self, inst, msg, ch) -> Optional[int]:
        kind = msg.kind
        if ch is None:
            extra = msg.extra or {}
            if kind is MsgKind.TRIGGER_BARRIER and "fetch" in extra:
                sub = tuple(extra["fetch"])
                holder = self.holder.get(sub)
                if holder == inst.name:
                    entry = (sub, extra["requester"])
                    parked = self.parked.setdefault(inst.name, [])
                    if entry not in parked:
                        parked.append(entry)
                    self._serve(inst)
                elif holder is not None:
                    self._control(self.sim.instance(holder), msg)
                # in transit: the arrival side re-checks outstanding requests
                return 0
            if kind is MsgKind.REROUTED_CONFIRM:
                self.notified.setdefault(inst.name, set()).add(tuple(extra["notify"]))
                return 0
            if kind is MsgKind.STATE_CHUNK:
                sub = (msg.kg, extra["sub"])
                self.holder[sub] = inst.name
                self.trace(inst.name, "chunk_install", self.sid, kg=sub[0], sub=sub[1])
                asks = self.requested.get(sub, {})
                asks.pop(inst.name, None)
                for requester in sorted(asks):
                    self.parked.setdefault(inst.name, []).append((sub, requester))
                asks.clear()
                self._serve(inst)
                if self.holder[sub] == inst.name:
                    self._push_leftovers(inst)
                self._check_finished()
                return self.sim.control_ticks
            raise ProtocolError(f"unexpected path item {msg!r}")
        if kind is MsgKind.CONFIRM_BARRIER and (msg.extra or {}).get("sync"):
            seen = self.seen.setdefault(inst.name, set())
            seen.add(ch.sender)
            self.trace(inst.name, "confirm", self.sid, channel=ch.sender)
            targets = sorted({tgt for kg, (src, tgt) in self.moving.items()
                              if src == inst.index})
            for t in targets:
                note = StreamMessage(MsgKind.REROUTED_CONFIRM, subscale_id=self.sid,
                                     extra={"notify": (inst.index, ch.sender)})
                self._control(self.inst_at(t), note)
            if seen >= set(self.preds):
                self.aligned.add(inst.index)
                self.trace(inst.name, "aligned", self.sid)
                self._push_leftovers(inst)
                self._check_finished()
            return self.sim.control_ticks
        if kind is MsgKind.DATA and msg.kg in self.moving and not self.finished:
            sub = (msg.kg, self.sub_of(msg.key))
            frag = self.fragments[sub]
            new, out = inst.logic.apply(frag.get(msg.key), msg.key, msg.payload, msg.event_time)
            frag[msg.key] = new
            self.sim.trace.add(self.now, inst.name, "apply", msg.seq_id,
                               {"key": msg.key, "origin": msg.origin, "kg": msg.kg})
            if out is not None:
                self.sim.emit_output(inst, out[0], out[1], msg.event_time)
            return inst.process_ticks
        return None

    def metrics(self):
        out = super().metrics()
        out["sub_migrations"] = {f"{kg}.{u}": n for (kg, u), n in sorted(self.sub_migrations.items())}
        return out
