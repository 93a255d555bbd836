"""Scale coordination: repartition planning, subscale division and scheduling,
deployment updates, session lifecycle and concurrent-request arbitration."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import (
    InvalidPartitioning, SessionIncomplete, SubscaleOverlap, UnknownOperator,
)
from .state import KgStatus, uniform_assignment


class Phase(enum.Enum):
    PENDING = "Pending"
    TRIGGERED = "Triggered"
    MIGRATING = "Migrating"
    COMPLETED = "Completed"
    CANCELLED = "Cancelled"


@dataclass
class Subscale:
    subscale_id: int
    keygroups: List[int]
    source: int
    target: int
    phase: Phase = Phase.PENDING

    def to_dict(self) -> Dict[str, Any]:
        return {"subscale_id": self.subscale_id, "keygroups": list(self.keygroups),
                "source": self.source, "target": self.target, "phase": self.phase.value}


@dataclass
class ScaleRequest:
    operator_id: str
    new_parallelism: int
    protocol: str = "drrs"
    issued_at: int = 0
    options: Dict[str, Any] = field(default_factory=dict)


@dataclass
class MigrationPlan:
    owner_before: List[int]
    owner_after: List[int]
    migrations: List[Tuple[int, int, int]]
    subscales: List[Subscale] = field(default_factory=list)

    @property
    def migrating(self) -> List[int]:
        return [kg for kg, _, _ in self.migrations]

    def to_dict(self) -> Dict[str, Any]:
        return {"owner_before": self.owner_before, "owner_after": self.owner_after,
                "migrations": [list(m) for m in self.migrations],
                "subscales": [s.to_dict() for s in self.subscales]}


def plan_repartition(K: int, n_old: int, n_new: int,
                     owner_before: Optional[Sequence[int]] = None) -> MigrationPlan:
    """Uniform repartition from ``n_old`` to ``n_new`` instances over ``K`` key-groups.

    ``owner_before`` overrides the uniform starting layout, which is how a
    plan is rebased on the ownership left behind by a terminated session.
    """
    if n_old < 1 or n_new < 1:
        raise InvalidPartitioning("parallelism must be >= 1")
    if n_new > K or n_old > K:
        raise InvalidPartitioning(f"parallelism exceeds {K} key-groups")
    before = list(owner_before) if owner_before is not None else uniform_assignment(n_old, K)
    after = uniform_assignment(n_new, K)
    migrations = [(kg, before[kg], after[kg]) for kg in range(K) if before[kg] != after[kg]]
    return MigrationPlan(before, after, migrations)


def _split_even(items: List[int], parts: int) -> List[List[int]]:
    base, extra = divmod(len(items), parts)
    out, i = [], 0
    for p in range(parts):
        size = base + (1 if p < extra else 0)
        out.append(items[i:i + size])
        i += size
    return out


def divide_subscales(migrations: Iterable[Tuple[int, int, int]], max_size: Optional[int],
                     first_id: int = 1) -> List[Subscale]:
    """Group by (source, target) and split each group into near-equal runs of kgs.

    ``max_size=None`` keeps each group whole (one subscale per pair).
    """
    if max_size is not None and max_size < 1:
        raise ValueError("max_size must be >= 1")
    groups: Dict[Tuple[int, int], List[int]] = {}
    for kg, src, tgt in migrations:
        groups.setdefault((src, tgt), []).append(kg)
    out: List[Subscale] = []
    sid = first_id
    for (src, tgt) in sorted(groups):
        kgs = sorted(groups[(src, tgt)])
        parts = 1 if max_size is None else math.ceil(len(kgs) / max_size)
        for chunk in _split_even(kgs, parts):
            out.append(Subscale(sid, chunk, src, tgt))
            sid += 1
    return out


def next_subscale(pending: Sequence[Subscale], holdings: Mapping[int, int],
                  in_flight: Mapping[int, int], cap: int = 2) -> Optional[Subscale]:
    """Pick the pending subscale whose target holds the fewest keys, within the per-node cap."""
    best = None
    for s in pending:
        if in_flight.get(s.source, 0) >= cap or in_flight.get(s.target, 0) >= cap:
            continue
        rank = (holdings.get(s.target, 0), s.subscale_id)
        if best is None or rank < best[0]:
            best = (rank, s)
    return best[1] if best else None


class SessionState(enum.Enum):
    RUNNING = "Running"
    DRAINING = "Draining"
    TERMINATED = "Terminated"
    COMPLETED = "Completed"


class ScalingSession:
    """One scaling request being executed by one protocol."""

    def __init__(self, session_id: int, request: ScaleRequest, plan: MigrationPlan):
        self.session_id = session_id
        self.request = request
        self.plan = plan
        self.state = SessionState.RUNNING
        self.protocol = None
        self.started_at: Optional[int] = None
        self.ended_at: Optional[int] = None
        self.timeline: List[Dict[str, Any]] = []
        self.new_instances: List[str] = []
        self.successor: Optional[ScaleRequest] = None

    @property
    def operator_id(self) -> str:
        return self.request.operator_id

    def log(self, tick: int, event: str, **info) -> None:
        row = {"tick": tick, "event": event}
        row.update(info)
        self.timeline.append(row)

    def summary(self) -> Dict[str, Any]:
        return {
            "session_id": self.session_id,
            "operator": self.operator_id,
            "protocol": self.request.protocol,
            "new_parallelism": self.request.new_parallelism,
            "state": self.state.value,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "plan": self.plan.to_dict(),
            "timeline": self.timeline,
            "terminations": [t for t in self.timeline if t["event"] == "terminated"],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def deploy_update(sim, op_id: str, plan: MigrationPlan) -> List[str]:
    """Create the instances ``plan`` needs and mark incoming key-groups on targets."""
    node = sim.graph.op(op_id)
    needed = max(plan.owner_after) + 1
    created = []
    while node.parallelism < needed:
        inst = sim.add_instance(op_id)
        created.append(inst.name)
    insts = sim.op_instances(op_id)
    for kg, _, tgt in plan.migrations:
        insts[tgt].store.expect([kg])
    return created


def holdings(sim, op_id: str) -> Dict[int, int]:
    """Keys currently readable per instance index."""
    out = {}
    for inst in sim.op_instances(op_id):
        out[inst.index] = sum(len(inst.store.entries(kg)) for kg in inst.store.readable_keygroups())
    return out


class ScaleCoordinator:
    """Single sequential controller for scale requests and checkpoints on one simulation."""

    def __init__(self, sim, subscale_size: Optional[int] = 4, node_cap: int = 2,
                 protocol_options: Optional[Dict[str, Any]] = None):
        self.sim = sim
        self.subscale_size = subscale_size
        self.node_cap = node_cap
        self.protocol_options = dict(protocol_options or {})
        self.active: Dict[str, ScalingSession] = {}
        self.sessions: List[ScalingSession] = []
        self._next_session = 1
        self._next_subscale = 1
        self.deferred_checkpoints: List[int] = []

    # requests
    def schedule(self, request: ScaleRequest) -> None:
        self.sim.at(request.issued_at, self.handle_scale_request, request)

    def handle_scale_request(self, request: ScaleRequest) -> str:
        sim = self.sim
        if request.operator_id not in sim.graph.operators:
            raise UnknownOperator(request.operator_id)
        if not sim._is_keyed_op(request.operator_id):
            raise UnknownOperator(f"{request.operator_id} is not a keyed operator")
        if not 1 <= request.new_parallelism <= sim.K:
            raise InvalidPartitioning(f"parallelism {request.new_parallelism} out of range")
        current = self.active.get(request.operator_id)
        if current is not None:
            current.successor = request
            if current.state is SessionState.RUNNING:
                current.state = SessionState.DRAINING
                current.log(sim.now, "terminated", superseded_by=request.new_parallelism)
                sim.trace.add(sim.now, "controller", "session_terminate", current.session_id,
                              {"operator": request.operator_id})
                current.protocol.terminate()
                self._maybe_finish(current)
            return "terminate_and_restart"
        if self._checkpoint_running() and self._defers(request.protocol):
            # protocols that defer checkpoints start only between checkpoints
            sim.at(sim.now + 1, self.handle_scale_request, request)
            return "wait_checkpoint"
        related = [s for s in self.active.values()
                   if request.operator_id in sim.graph.predecessors(s.operator_id)
                   or request.operator_id in sim.graph.successors(s.operator_id)]
        self.start_session(request)
        return "consistent_deploy" if related else "start"

    def start_session(self, request: ScaleRequest) -> ScalingSession:
        from .protocols import make_protocol
        sim = self.sim
        op = request.operator_id
        owners = sim.graph.owner_map(op)
        n_old = sim.graph.op(op).parallelism
        plan = plan_repartition(sim.K, n_old, request.new_parallelism, owner_before=owners)
        session = ScalingSession(self._next_session, request, plan)
        self._next_session += 1
        session.started_at = sim.now
        self.sessions.append(session)
        self.active[op] = session
        session.new_instances = deploy_update(sim, op, plan)
        options = dict(self.protocol_options)
        options.update(request.options)
        proto = make_protocol(request.protocol, sim, session, self, **options)
        session.protocol = proto
        session.log(sim.now, "start", migrating=len(plan.migrations))
        sim.trace.add(sim.now, "controller", "session_start", session.session_id,
                      {"operator": op, "protocol": proto.name,
                       "migrating": len(plan.migrations)})
        proto.start()
        self._maybe_finish(session)
        return session

    def _checkpoint_running(self) -> bool:
        ck = self.sim.checkpoints
        return ck is not None and bool(ck.in_flight())

    @staticmethod
    def _defers(protocol: str) -> bool:
        from .protocols import protocol_class
        return protocol_class(protocol).defers_checkpoints

    def new_subscale_ids(self, migrations, max_size) -> List[Subscale]:
        subs = divide_subscales(migrations, max_size, first_id=self._next_subscale)
        self._next_subscale += len(subs)
        return subs

    def protocol_done(self, session: ScalingSession) -> None:
        self._maybe_finish(session)

    def _maybe_finish(self, session: ScalingSession) -> None:
        if session.state in (SessionState.COMPLETED, SessionState.TERMINATED):
            return
        if not session.protocol.is_done():
            return
        self.finalize_scaling(session)

    def finalize_scaling(self, session: ScalingSession) -> None:
        sim = self.sim
        proto = session.protocol
        if not proto.is_done():
            raise SessionIncomplete(f"session {session.session_id} has unfinished work")
        proto.cleanup()
        op = session.operator_id
        for inst in sim.op_instances(op):
            sim.close_suspension(inst)
            inst.hooks = None
            inst.store.settle()
            # clear target marks of migrations cancelled by termination
            for kg in inst.store.keygroups(KgStatus.INCOMING):
                inst.store.release(kg)
        owners = sim.graph.owner_map(op)
        for inst in list(sim.op_instances(op)):
            if inst.index >= session.request.new_parallelism and inst.index not in owners \
                    and session.state is not SessionState.DRAINING:
                sim.remove_instance(inst)
        session.ended_at = sim.now
        terminated = session.state is SessionState.DRAINING
        session.state = SessionState.TERMINATED if terminated else SessionState.COMPLETED
        session.log(sim.now, "end", state=session.state.value)
        sim.trace.add(sim.now, "controller", "session_end", session.session_id,
                      {"operator": op, "state": session.state.value})
        del self.active[op]
        for inst in sim.op_instances(op):
            if inst.logic.windowed:
                sim.fire_windows(inst)
            sim.wake(inst)
        if session.successor is not None:
            nxt, session.successor = session.successor, None
            self.start_session(nxt)
        elif not any(s.protocol.defers_checkpoints for s in self.active.values()):
            pending, self.deferred_checkpoints = self.deferred_checkpoints, []
            for cid in pending:
                self.trigger_checkpoint(cid)

    # checkpoints
    def trigger_checkpoint(self, checkpoint_id: int) -> None:
        sim = self.sim
        if any(s.protocol.defers_checkpoints for s in self.active.values()):
            self.deferred_checkpoints.append(checkpoint_id)
            sim.trace.add(sim.now, "controller", "checkpoint_deferred", 0,
                          {"checkpoint": checkpoint_id})
            return
        sim.checkpoints.inject(checkpoint_id)

    def schedule_checkpoint(self, checkpoint_id: int, tick: int) -> None:
        from .runtime.checkpoint import CheckpointCoordinator
        if self.sim.checkpoints is None:
            self.sim.checkpoints = CheckpointCoordinator(self.sim)
        self.sim.at(tick, self.trigger_checkpoint, checkpoint_id)

    def summaries(self) -> List[Dict[str, Any]]:
        return [s.summary() for s in self.sessions]
