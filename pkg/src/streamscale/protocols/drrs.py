"""Decoupled trigger/confirm scaling with re-routing, record scheduling and
subscale division.

Per subscale, every predecessor updates its routing, sends a trigger on the
priority lane to the subscale's source instance, puts a confirm on the wire
ahead of its output cache, and moves cached records of the migrating
key-groups to the target's channel.  The source starts streaming chunks on
the trigger and forwards each confirm (after any records it rerouted for that
channel) to the target, which aligns implicitly per channel.
"""
from __future__ import annotations

from collections import deque
from typing import Any, Deque, Dict, List, Optional, Set

from ..control import Phase, Subscale, holdings, next_subscale
from ..errors import DuplicateConfirm, ProtocolError, StaleTrigger, SubscaleOverlap
from ..runtime.channel import Channel, redirect_output_cache
from ..runtime.engine import Instance
from ..runtime.messages import MsgKind, StreamMessage, confirm, trigger
from ..state import KgStatus, key_to_keygroup
from .base import MigrationPath, ScalingProtocol

E_P = "E_p"
E_F = "E_f"

DATA = MsgKind.DATA
CKPT = MsgKind.CHECKPOINT_BARRIER
_LOCALISH = (KgStatus.LOCAL, KgStatus.MIGRATING_OUT, KgStatus.MIGRATED_OUT)


class SubscaleRun:
    """Runtime progress of one subscale on both of its instances."""

    def __init__(self, sub: Subscale, source: Instance, target: Instance):
        self.sub = sub
        self.sid = sub.subscale_id
        self.kgs = list(sub.keygroups)
        self.kgset = set(sub.keygroups)
        self.source = source
        self.target = target
        self.injected_at: Optional[int] = None
        self.ckpt_epoch = 0
        self.channels: List[str] = []
        self.epoch: Dict[str, str] = {}
        self.confirmed: Set[str] = set()
        self.triggered = False
        self.to_extract: Deque[int] = deque()
        self.emitted: List[int] = []
        self.installed: Set[int] = set()
        self.active: Set[int] = set()
        self.buffer: List[StreamMessage] = []
        self.buffer_gen = 0
        self.path: Optional[MigrationPath] = None
        self.first_chunk: Optional[int] = None
        self.rerouted = 0
        self.aligned = False
        self.completed_at: Optional[int] = None

    @property
    def completed(self) -> bool:
        return self.completed_at is not None

    def state(self, checkpoint_id: int) -> Dict[str, Any]:
        return {
            "subscale_id": self.sid, "phase": self.sub.phase.value,
            "keygroups": list(self.kgs), "source": self.source.name,
            "target": self.target.name, "emitted": list(self.emitted),
            "in_transit": sorted(set(self.emitted) - self.installed),
            "epochs": dict(self.epoch), "pre_cut": self.ckpt_epoch < checkpoint_id,
        }


class DRRS(ScalingProtocol):
    name = "drrs"
    defers_checkpoints = False

    def __init__(self, sim, session, coordinator, scheduling: bool = True,
                 inter_channel: Optional[bool] = None, intra_channel: Optional[bool] = None,
                 relaxed_watermarks: bool = False, subscale_size: Any = "default",
                 node_cap: Optional[int] = None, reroute_capacity: int = 16,
                 reroute_timeout: int = 2, scan_window: int = 200, **options):
        super().__init__(sim, session, coordinator, **options)
        self.inter_channel = scheduling if inter_channel is None else inter_channel
        self.intra_channel = scheduling if intra_channel is None else intra_channel
        self.relaxed_watermarks = relaxed_watermarks
        self.scan_window = scan_window
        self.subscale_size = coordinator.subscale_size if subscale_size == "default" \
            else subscale_size
        self.node_cap = node_cap or coordinator.node_cap
        self.reroute_capacity = reroute_capacity
        self.reroute_timeout = reroute_timeout
        self.runs: Dict[int, SubscaleRun] = {}
        self.pending: List[Subscale] = []
        self.in_flight: Dict[int, int] = {}
        self.kg_run: Dict[int, SubscaleRun] = {}
        self.waiting: Dict[int, Deque[StreamMessage]] = {}
        self.ready: Dict[str, Deque[StreamMessage]] = {}
        self.ready_count: Dict[int, int] = {}
        self.fused: Dict[tuple, list] = {}
        self.deferred: Dict[str, list] = {}
        # redirected records per key-group not yet applied at the target; they
        # may sit behind newer watermarks on the target channel
        self.held: Dict[int, int] = {}
        self.terminated = False
        self._relaunch = False
        self.reroutes = 0

    # session lifecycle
    def start(self) -> None:
        self.install_hooks()
        subs = self.coordinator.new_subscale_ids(self.plan.migrations, self.subscale_size)
        self.pending = list(subs)
        self.session.log(self.now, "plan", subscales=[s.to_dict() for s in subs])
        self._launch()

    def _launch(self) -> None:
        cuts = {p.last_ckpt for p in self.predecessors()}
        if len(cuts) > 1 and self.pending and not self.terminated:
            # a checkpoint is half-way through the predecessors; wait for a clean cut
            if not self._relaunch:
                self._relaunch = True
                self.sim.at(self.now + 1, self._retry_launch)
            return
        if not self.terminated:
            while self.pending:
                held = holdings(self.sim, self.op_id)
                sub = next_subscale(self.pending, held, self.in_flight, self.node_cap)
                if sub is None:
                    break
                self.pending.remove(sub)
                self.inject_subscale(sub)
        if self.is_done():
            self.done()

    def _retry_launch(self) -> None:
        self._relaunch = False
        self._launch()

    def terminate(self) -> None:
        self.terminated = True
        for sub in self.pending:
            sub.phase = Phase.CANCELLED
            self.session.log(self.now, "cancel", subscale=sub.subscale_id)
        self.pending = []

    def is_done(self) -> bool:
        return (not self.pending and all(r.completed for r in self.runs.values())
                and not self.held)

    def cleanup(self) -> None:
        self.ready.clear()
        self.waiting.clear()
        self.fused.clear()
        self.deferred.clear()
        for inst in self.instances():
            inst.path_inbox.clear()

    # predecessor side
    def inject_subscale(self, sub: Subscale) -> SubscaleRun:
        sim = self.sim
        for run in self.runs.values():
            if not run.completed and run.kgset & set(sub.keygroups):
                raise SubscaleOverlap(f"subscale {sub.subscale_id} overlaps {run.sid}")
        src, tgt = self.inst_at(sub.source), self.inst_at(sub.target)
        run = SubscaleRun(sub, src, tgt)
        self.runs[run.sid] = run
        for kg in run.kgs:
            self.kg_run[kg] = run
        self.in_flight[sub.source] = self.in_flight.get(sub.source, 0) + 1
        self.in_flight[sub.target] = self.in_flight.get(sub.target, 0) + 1
        run.injected_at = self.now
        run.path = self.path(f"path{run.sid}", src.order, lambda r=run: self._next_chunk(r))
        preds = self.predecessors()
        run.channels = [p.name for p in preds]
        run.epoch = {p.name: E_P for p in preds}
        run.ckpt_epoch = max((p.last_ckpt for p in preds), default=0)
        self.trace("controller", "inject", run.sid, kgs=run.kgs, source=src.name,
                   target=tgt.name)
        self.session.log(self.now, "inject", subscale=run.sid)
        update = {kg: sub.target for kg in run.kgs}
        for pred in preds:
            self.table_of(pred).apply_update(update)
            old = sim.graph.channel(pred.name, src.name)
            new = sim.graph.channel(pred.name, tgt.name)
            barrier = None
            for m in reversed(old.output_cache):
                if m.kind is CKPT:
                    barrier = m
                    break
            if barrier is not None:
                # the checkpoint barrier carries trigger and confirm for this subscale
                barrier.extra = dict(barrier.extra or {})
                barrier.extra.setdefault("fused", []).append(run.sid)
                moved = redirect_output_cache(old, new, run.kgset, sim.K, after_checkpoint=True,
                                              on_move=self._hold)
                self.trace(pred.name, "fuse", run.sid, checkpoint=barrier.checkpoint_id)
            else:
                after = pred.last_ckpt if pred.last_ckpt > src.last_ckpt else None
                # data behind the trigger: everything not yet in the source's input buffer
                behind = [m.seq_id for t, m in old.wire if m.kind is DATA and t > self.now]
                behind += [m.seq_id for m in old.output_cache if m.kind is DATA]
                first = behind[0] if behind else pred.seq.peek()
                self.trace(pred.name, "trigger_sent", run.sid, queued=len(behind),
                           first_behind=first, source=src.name)
                sim.send_priority(old, trigger(run.sid, pred.seq.next_control(), after_ckpt=after))
                sim.send_wire(old, confirm(run.sid, pred.seq.next_control()))
                moved = redirect_output_cache(old, new, run.kgset, sim.K, on_move=self._hold)
            self.trace(pred.name, "redirect", run.sid, moved=moved)
            sim._pump(old)
            sim._pump(new)
            self._restall(pred, (old, new))
        return run

    def _hold(self, msg: StreamMessage) -> None:
        msg.extra = dict(msg.extra or {}, held=True)
        self.held[msg.kg] = self.held.get(msg.kg, 0) + 1

    def _release(self, inst: Instance, msg: StreamMessage) -> int:
        self.sim.apply_record(inst, msg)
        kg = msg.kg
        left = self.held[kg] - 1
        if left:
            self.held[kg] = left
        else:
            del self.held[kg]
            if self.can_fire(inst, kg):
                self.fire_after(inst, [kg])
            if self.is_done():
                self.done()
        return inst.process_ticks

    def _restall(self, pred: Instance, chans) -> None:
        for ch in chans:
            if ch.cache_full():
                pred.stalled_on.add(ch)
            else:
                pred.stalled_on.discard(ch)
        if not pred.stalled_on:
            self.sim.wake(pred)

    # source side
    def _start_migration(self, run: SubscaleRun, inst: Instance) -> None:
        if run.triggered:
            self.trace(inst.name, "trigger_ignored", run.sid)
            return
        run.triggered = True
        run.sub.phase = Phase.TRIGGERED
        inst.store.begin_extraction(run.kgs)
        run.to_extract = deque(sorted(run.kgs))
        self.trace(inst.name, "trigger", run.sid)
        run.path.kick()

    def _next_chunk(self, run: SubscaleRun):
        if not run.to_extract:
            return None
        kg = run.to_extract.popleft()
        msg = self.emit_chunk(run.source, kg, run.sid, run.target)
        if run.first_chunk is None:
            run.first_chunk = self.now
            run.sub.phase = Phase.MIGRATING
        run.emitted.append(kg)
        return msg, run.target

    def _confirm(self, run: SubscaleRun, inst: Instance, channel: str) -> None:
        if not run.triggered:
            self._start_migration(run, inst)
        if channel in run.confirmed:
            raise DuplicateConfirm(f"subscale {run.sid} channel {channel}")
        run.confirmed.add(channel)
        self._flush(run)
        rc = StreamMessage(MsgKind.REROUTED_CONFIRM, subscale_id=run.sid,
                           extra={"channel": channel})
        self.trace(inst.name, "confirm", run.sid, channel=channel)
        run.path.send(rc, run.target)

    def reroute_record(self, inst: Instance, msg: StreamMessage) -> None:
        kg = msg.kg
        if inst.store.status(kg) is not KgStatus.MIGRATED_OUT:
            from ..errors import NotMigrated
            raise NotMigrated(f"key-group {kg} is not migrated out of {inst.name}")
        run = self.kg_run[kg]
        wrapped = StreamMessage(MsgKind.REROUTED_RECORD, key=msg.key, payload=msg,
                                subscale_id=run.sid, seq_id=msg.seq_id, origin=msg.origin,
                                kg=kg)
        run.buffer.append(wrapped)
        run.rerouted += 1
        self.reroutes += 1
        self.trace(inst.name, "reroute", msg.seq_id, subscale=run.sid, kg=kg)
        if len(run.buffer) >= self.reroute_capacity:
            self._flush(run)
        elif len(run.buffer) == 1:
            run.buffer_gen += 1
            self.sim.clock.schedule(self.now + self.reroute_timeout, inst.order, inst.name,
                                    "reroute_timeout", self._timeout, run, run.buffer_gen)

    def _timeout(self, run: SubscaleRun, gen: int) -> None:
        if gen == run.buffer_gen and run.buffer:
            self._flush(run)

    def _flush(self, run: SubscaleRun) -> None:
        run.buffer_gen += 1
        items, run.buffer = run.buffer, []
        for w in items:
            run.path.send(w, run.target)

    # target side
    def _epoch(self, run: SubscaleRun, channel: str) -> str:
        # channels created after injection only ever carry post-update records
        return run.epoch.get(channel, E_F)

    def _activate(self, run: SubscaleRun, inst: Instance, kg: int) -> None:
        inst.store.activate(kg)
        run.active.add(kg)
        self.trace(inst.name, "activate", run.sid, kg=kg)
        queued = self.waiting.pop(kg, None)
        if queued:
            self.ready.setdefault(inst.name, deque()).extend(queued)
            self.ready_count[kg] = self.ready_count.get(kg, 0) + len(queued)

    def _check_complete(self, run: SubscaleRun) -> None:
        if run.completed or not run.aligned or len(run.active) != len(run.kgs):
            return
        for kg in run.kgs:
            if self.waiting.get(kg) or self.ready_count.get(kg):
                return
        run.completed_at = self.now
        run.sub.phase = Phase.COMPLETED
        self.trace(run.target.name, "subscale_complete", run.sid)
        self.session.log(self.now, "complete", subscale=run.sid)
        for idx in (run.sub.source, run.sub.target):
            self.in_flight[idx] -= 1
        self.fire_after(run.target, run.kgs)
        self.sim.at(self.now, self._launch)
        self.sim.wake(run.target)

    # hooks
    def processable(self, inst: Instance, msg: StreamMessage, ch: Channel) -> bool:
        kind = msg.kind
        if kind is DATA:
            kg = msg.kg
            if kg < 0:
                kg = msg.kg = key_to_keygroup(msg.key, self.sim.K)
            status = inst.store.status(kg)
            if status in _LOCALISH:
                return True
            if status is KgStatus.ACTIVE:
                run = self.kg_run.get(kg)
                if run is None or run.completed:
                    return True
                if self._epoch(run, ch.sender) != E_F:
                    return False
                return not self.waiting.get(kg) and not self.ready_count.get(kg)
            return False
        if kind is CKPT:
            cid = msg.checkpoint_id
            for run in self.runs.values():
                if run.target is inst and not run.completed and run.ckpt_epoch < cid:
                    return False
        return True

    def special(self, inst: Instance) -> Optional[StreamMessage]:
        if inst.path_inbox:
            return inst.path_inbox.popleft()
        q = self.ready.get(inst.name)
        if q:
            return q.popleft()
        return None

    def handle(self, inst: Instance, msg: StreamMessage, ch) -> Optional[int]:
        kind = msg.kind
        if ch is None:
            return self._handle_path(inst, msg)
        if kind is DATA:
            if inst.store.status(msg.kg) is KgStatus.MIGRATED_OUT:
                self.reroute_record(inst, msg)
                return 0
            if msg.extra and msg.extra.get("held"):
                return self._release(inst, msg)
            return None
        if kind is MsgKind.TRIGGER_BARRIER:
            run = self.runs.get(msg.subscale_id)
            if run is None:
                raise ProtocolError(f"trigger for unknown subscale {msg.subscale_id}")
            if run.completed:
                self.trace(inst.name, "stale_trigger", run.sid)
                return 0
            after = (msg.extra or {}).get("after_ckpt")
            if after and inst.last_ckpt < after:
                self.deferred.setdefault(inst.name, []).append((after, run.sid))
                self.trace(inst.name, "trigger_deferred", run.sid, checkpoint=after)
                return 0
            self._start_migration(run, inst)
            return self.sim.control_ticks
        if kind is MsgKind.CONFIRM_BARRIER:
            run = self.runs.get(msg.subscale_id)
            if run is None:
                raise ProtocolError(f"confirm for unknown subscale {msg.subscale_id}")
            self._confirm(run, inst, ch.sender)
            return self.sim.control_ticks
        if kind is CKPT and msg.extra and msg.extra.get("fused"):
            key = (inst.name, msg.checkpoint_id)
            self.fused.setdefault(key, []).extend((sid, ch.sender) for sid in msg.extra["fused"])
        return None

    def _handle_path(self, inst: Instance, msg: StreamMessage) -> int:
        kind = msg.kind
        if kind is DATA:
            # a rerouted record whose key-group is active here
            kg = msg.kg
            self.ready_count[kg] -= 1
            self.sim.apply_record(inst, msg)
            run = self.kg_run.get(kg)
            if run is not None:
                self._check_complete(run)
            return inst.process_ticks
        run = self.runs[msg.subscale_id]
        if kind is MsgKind.STATE_CHUNK:
            chunk = msg.payload
            inst.store.install_chunk(chunk)
            run.installed.add(chunk.keygroup)
            self.trace(inst.name, "chunk_install", run.sid, kg=chunk.keygroup)
            if self.inter_channel or run.aligned:
                self._activate(run, inst, chunk.keygroup)
            self._check_complete(run)
            return self.sim.control_ticks
        if kind is MsgKind.REROUTED_RECORD:
            kg = msg.kg
            data = msg.payload
            if inst.store.status(kg) is KgStatus.ACTIVE and not self.waiting.get(kg):
                self.ready.setdefault(inst.name, deque()).append(data)
                self.ready_count[kg] = self.ready_count.get(kg, 0) + 1
            else:
                self.waiting.setdefault(kg, deque()).append(data)
            return 0
        if kind is MsgKind.REROUTED_CONFIRM:
            channel = msg.extra["channel"]
            if run.epoch.get(channel) == E_F:
                raise DuplicateConfirm(f"subscale {run.sid} channel {channel}")
            run.epoch[channel] = E_F
            self.trace(inst.name, "epoch_flip", run.sid, channel=channel)
            if all(e == E_F for e in run.epoch.values()):
                run.aligned = True
                self.trace(inst.name, "aligned", run.sid)
                for kg in sorted(run.installed - run.active):
                    self._activate(run, inst, kg)
            self._check_complete(run)
            return 0
        raise ProtocolError(f"unexpected path item {msg!r}")

    def can_fire(self, inst: Instance, kg: int) -> bool:
        if kg in self.held:
            return False
        run = self.kg_run.get(kg)
        return run is None or run.completed

    def on_aligned(self, inst: Instance, checkpoint_id: int) -> None:
        for sid, channel in self.fused.pop((inst.name, checkpoint_id), []):
            run = self.runs[sid]
            self._start_migration(run, inst)
            self._confirm(run, inst, channel)
        waiting = self.deferred.get(inst.name, [])
        keep = []
        for after, sid in waiting:
            if after <= inst.last_ckpt:
                self._start_migration(self.runs[sid], inst)
            else:
                keep.append((after, sid))
        self.deferred[inst.name] = keep

    def capture(self, inst: Instance, checkpoint_id: int) -> Optional[dict]:
        rows = [r.state(checkpoint_id) for r in self.runs.values()
                if r.source is inst or r.target is inst]
        return {"protocol": self.name, "subscales": rows} if rows else None

    def metrics(self) -> Dict[str, Any]:
        out = super().metrics()
        out["reroutes"] = self.reroutes
        out["subscales"] = {
            r.sid: {"injected_at": r.injected_at, "first_chunk": r.first_chunk,
                    "completed_at": r.completed_at, "kgs": r.kgs, "rerouted": r.rerouted}
            for r in self.runs.values()
        }
        return out
