"""Stop the sources, drain, snapshot, redistribute state, restart."""
from __future__ import annotations

import math
from typing import Optional

from .base import ScalingProtocol


class StopRestart(ScalingProtocol):
    name = "stop_restart"

    def __init__(self, sim, session, coordinator, downtime: int = 200, **options):
        super().__init__(sim, session, coordinator, **options)
        self.downtime = downtime
        self.sid = -session.session_id
        self.halted_at: Optional[int] = None
        self.drained_at: Optional[int] = None
        self.restarted_at: Optional[int] = None
        self.finished = False

    def start(self) -> None:
        self.install_hooks()
        for inst in self.instances():
            if inst.logic is not None:
                self.entry_bytes = getattr(inst.logic, "state_bytes", self.entry_bytes)
        self.halted_at = self.now
        self.trace("controller", "inject", self.sid, kgs=self.plan.migrating,
                   protocol=self.name)
        self.sim.halt_sources()
        self.sim.at(self.now + 1, self._check_drained)

    def _quiet(self) -> bool:
        sim = self.sim
        if sim.in_flight():
            return False
        return all(not i.busy and not i.path_inbox and not i.prio_queue
                   for i in sim.instances.values() if not i.closed)

    def _check_drained(self) -> None:
        if not self._quiet():
            self.sim.at(self.now + 1, self._check_drained)
            return
        self.drained_at = self.now
        self.trace("controller", "stop_snapshot", self.sid)
        total = 0
        for kg, src, _ in self.plan.migrations:
            total += len(self.inst_at(src).store.entries(kg)) * self.entry_bytes
        transfer = math.ceil(total / self.bandwidth) + self.chunk_overhead * len(self.plan.migrations)
        self.sim.at(self.now + self.downtime + transfer, self._restart)

    def _restart(self) -> None:
        for kg, src, tgt in sorted(self.plan.migrations):
            s, t = self.inst_at(src), self.inst_at(tgt)
            s.store.begin_extraction([kg])
            msg = self.emit_chunk(s, kg, self.sid, t)
            t.store.install_chunk(msg.payload)
            t.store.activate(kg)
            self.trace(t.name, "activate", self.sid, kg=kg)
        update = {kg: tgt for kg, _, tgt in self.plan.migrations}
        for pred in self.predecessors():
            self.table_of(pred).apply_update(update)
        self.restarted_at = self.now
        self.finished = True
        self.session.log(self.now, "restart", downtime=self.now - self.halted_at)
        # with several stopped operators, the last one to restart resumes the sources
        others = [s.protocol for s in self.coordinator.active.values()
                  if s is not self.session and isinstance(s.protocol, StopRestart)
                  and not s.protocol.finished]
        if not others:
            self.sim.resume_sources()
        self.done()

    def is_done(self) -> bool:
        return self.finished

    def metrics(self):
        out = super().metrics()
        if self.restarted_at is not None:
            out["downtime"] = self.restarted_at - self.halted_at
        return out
