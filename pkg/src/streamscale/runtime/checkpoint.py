"""Aligned-barrier checkpoints and restore.

Sources record their replay offsets and inject a checkpoint barrier on every
output channel.  Every other instance captures its state once the barrier
has arrived on all expected inputs, then forwards it.  Key-group state is
taken from the instance that owned the key-group in the routing tables the
predecessors held when they forwarded the barrier.
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional

from ..errors import DuplicateCheckpoint, StreamScaleError
from ..state import RoutingTable, dump_state_lines
from .engine import NEG_INF, Instance, Simulation
from .graph import JobSpec
from .messages import MsgKind, StreamMessage


@dataclass
class InstanceCapture:
    name: str
    op_id: str
    index: int
    tick: int
    seq_issued: int
    keyed: Optional[Dict[int, Dict[bytes, Any]]] = None
    routing: Dict[str, List[int]] = field(default_factory=dict)
    watermarks: Dict[str, int] = field(default_factory=dict)
    wm: int = NEG_INF
    source: Optional[Dict[str, Any]] = None
    sink_out: Optional[list] = None
    scaling: Optional[dict] = None


@dataclass
class Snapshot:
    checkpoint_id: int
    tick: int
    parallelism: Dict[str, int]
    owners: Dict[str, List[int]]
    keyed_state: Dict[str, Dict[int, Dict[bytes, Any]]]
    instances: Dict[str, InstanceCapture]

    def scaling_state(self) -> Dict[str, dict]:
        return {n: c.scaling for n, c in sorted(self.instances.items()) if c.scaling}

    def state_lines(self, op_id: str) -> Iterator[str]:
        return dump_state_lines(self.keyed_state[op_id])

    def dump(self, path, op_id: str) -> None:
        with open(path, "w") as fh:
            for line in self.state_lines(op_id):
                fh.write(line + "\n")

    def flat_state(self, op_id: str) -> Dict[bytes, Any]:
        out = {}
        for entries in self.keyed_state[op_id].values():
            out.update(entries)
        return out


class CheckpointCoordinator:
    def __init__(self, sim: Simulation):
        self.sim = sim
        self.injected: Dict[int, int] = {}
        self.captures: Dict[int, Dict[str, InstanceCapture]] = {}

    def in_flight(self) -> List[int]:
        live = [i for i in self.sim.instances.values() if not i.closed]
        return [cid for cid in sorted(self.injected)
                if any(i.last_ckpt < cid for i in live)]

    def complete(self, cid: int) -> bool:
        return cid in self.injected and cid not in self.in_flight()

    def inject(self, cid: int) -> None:
        sim = self.sim
        if cid in self.injected or (self.injected and cid < max(self.injected)):
            raise DuplicateCheckpoint(f"checkpoint {cid} already issued")
        self.injected[cid] = sim.now
        self.captures[cid] = {}
        sim.trace.add(sim.now, "controller", "checkpoint_inject", 0, {"checkpoint": cid})
        for inst in sorted(sim.instances.values(), key=lambda i: i.order):
            if inst.is_source and not inst.closed:
                inst.last_ckpt = cid
                self.capture(inst, cid)
                sim.trace.add(sim.now, inst.name, "checkpoint", 0, {"checkpoint": cid})
                sim.broadcast(inst, lambda: StreamMessage(MsgKind.CHECKPOINT_BARRIER,
                                                          checkpoint_id=cid,
                                                          origin=inst.name))

    def capture(self, inst: Instance, cid: int) -> None:
        sim = self.sim
        cap = InstanceCapture(inst.name, inst.op_id, inst.index, sim.now, inst.seq.issued)
        if inst.store is not None:
            cap.keyed = inst.store.snapshot()
        for r in inst.routes:
            if r.table is not None:
                cap.routing[r.dst_op] = r.table.owners()
        names = {c.index: c.sender for c in inst.inputs}
        cap.watermarks = {names[i]: w for i, w in inst.ch_wm.items() if i in names}
        cap.wm = inst.wm
        if inst.source is not None:
            cap.source = inst.source.offsets()
        if inst.is_sink:
            cap.sink_out = list(inst.sink_out)
        if inst.hooks is not None:
            cap.scaling = copy.deepcopy(inst.hooks.capture(inst, cid))
        self.captures.setdefault(cid, {})[inst.name] = cap

    def snapshot(self, cid: int) -> Snapshot:
        if not self.complete(cid):
            raise StreamScaleError(f"checkpoint {cid} is not complete")
        sim = self.sim
        caps = self.captures[cid]
        owners: Dict[str, List[int]] = {}
        for cap in caps.values():
            for op, table in cap.routing.items():
                seen = owners.setdefault(op, table)
                if seen != table:
                    raise StreamScaleError(f"inconsistent routing for {op} at checkpoint {cid}")
        keyed: Dict[str, Dict[int, Dict[bytes, Any]]] = {}
        parallelism: Dict[str, int] = {}
        for op_id, node in sim.graph.operators.items():
            if op_id in owners:
                parallelism[op_id] = max(owners[op_id]) + 1
            else:
                parallelism[op_id] = sum(1 for c in caps.values() if c.op_id == op_id)
        for op_id, table in owners.items():
            by_index = {c.index: c for c in caps.values() if c.op_id == op_id}
            state: Dict[int, Dict[bytes, Any]] = {}
            for kg, owner in enumerate(table):
                cap = by_index.get(owner)
                if cap is None or cap.keyed is None or kg not in cap.keyed:
                    raise StreamScaleError(
                        f"checkpoint {cid}: key-group {kg} missing at {op_id}#{owner}")
                state[kg] = dict(cap.keyed[kg])
            keyed[op_id] = state
        return Snapshot(cid, self.injected[cid], parallelism, owners, keyed, dict(caps))


def run_checkpoint(sim: Simulation, checkpoint_id: int, max_ticks: int = 1 << 40) -> Snapshot:
    """Inject a checkpoint now and run until every instance has captured it."""
    if sim.checkpoints is None:
        sim.checkpoints = CheckpointCoordinator(sim)
    coord = sim.checkpoints
    coord.inject(checkpoint_id)
    while not coord.complete(checkpoint_id):
        if not sim.clock.pending() or sim.now > max_ticks:
            raise StreamScaleError(f"checkpoint {checkpoint_id} never completed")
        sim.clock.step()
    return coord.snapshot(checkpoint_id)


def restore(snapshot: Snapshot, job: JobSpec, workload=None,
            trace_records: bool = True) -> Simulation:
    """Build a fresh simulation positioned at ``snapshot``; run it to replay the rest."""
    spec = copy.deepcopy(job)
    spec.operators = [dataclasses.replace(o, parallelism=snapshot.parallelism.get(o.id,
                                                                                o.parallelism))
                      for o in spec.operators]
    sim = Simulation(spec, workload=None, trace_records=trace_records)
    sim.clock.now = snapshot.tick
    for (up, down), table in sim.graph.routing.items():
        if down in snapshot.owners:
            table.apply_update(dict(enumerate(snapshot.owners[down])))
    for op_id, state in snapshot.keyed_state.items():
        insts = sim.op_instances(op_id)
        for inst in insts:
            for kg in list(inst.store.keygroups()):
                inst.store.release(kg)
        for kg, entries in state.items():
            insts[snapshot.owners[op_id][kg]].store.adopt(kg, entries)
    by_name = {c.name: c for c in snapshot.instances.values()}
    for inst in sim.instances.values():
        cap = by_name.get(inst.name)
        if cap is None:
            continue
        inst.seq.issued = cap.seq_issued
        inst.last_ckpt = snapshot.checkpoint_id
        chans = {c.sender: c.index for c in inst.inputs}
        inst.ch_wm = {chans[s]: w for s, w in cap.watermarks.items() if s in chans}
        inst.wm = cap.wm
        if cap.sink_out is not None:
            inst.sink_out = list(cap.sink_out)
    for ch in sim.graph.channels.values():
        ch.ckpt_floor = snapshot.checkpoint_id + 1
    if workload is not None:
        sim._attach_workload(workload)
        for inst in sim.instances.values():
            cap = by_name.get(inst.name)
            if inst.source is not None and cap is not None and cap.source is not None:
                inst.source.restore(cap.source)
                sim._schedule_source(inst, snapshot.tick)
    sim.trace.add(sim.now, "controller", "restore", 0, {"checkpoint": snapshot.checkpoint_id})
    return sim
