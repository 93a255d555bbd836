"""Scenario description and the one-call runner used by tests and the CLI."""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import yaml

from ..control import ScaleCoordinator, ScaleRequest
from ..errors import StreamScaleError
from ..runtime.engine import Simulation
from ..runtime.graph import JobSpec, three_operator_job
from ..runtime.trace import Trace
from .metrics import MetricsReport, compute_metrics
from .workload import Workload, WorkloadConfig, generate_workload


@dataclass
class ScenarioConfig:
    name: str = "default"
    parallelism: int = 2
    new_parallelism: int = 3
    num_keygroups: int = 32
    sources: int = 2
    operator: str = "keyed_aggregate"
    params: Dict[str, Any] = field(default_factory=dict)
    process_ticks: int = 1
    latency_ticks: int = 1
    channel_capacity: int = 1000
    buffer_size: int = 256
    control_ticks: int = 1
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    protocol: str = "drrs"
    protocol_options: Dict[str, Any] = field(default_factory=dict)
    scale_operator: str = "agg"
    scale_at: Optional[int] = None
    subscale_size: Optional[int] = 4
    node_cap: int = 2
    bandwidth: int = 512
    chunk_overhead: int = 1
    checkpoints: List[Tuple[int, int]] = field(default_factory=list)
    stab_window: int = 2000
    threshold: float = 1.10
    trace_records: bool = True
    job: Optional[JobSpec] = None

    def build_job(self) -> JobSpec:
        if self.job is not None:
            return copy.deepcopy(self.job)
        params = dict(self.params)
        params.setdefault("state_bytes", self.workload.payload_bytes)
        return three_operator_job(
            parallelism=self.parallelism, num_keygroups=self.num_keygroups,
            sources=self.sources, kind=self.operator, process_ticks=self.process_ticks,
            params=params, channel_capacity=self.channel_capacity,
            buffer_size=self.buffer_size, latency_ticks=self.latency_ticks,
            control_ticks=self.control_ticks, seed=self.workload.seed,
        )

    @property
    def scale_tick(self) -> int:
        return self.workload.duration // 2 if self.scale_at is None else self.scale_at

    def replace(self, **changes) -> "ScenarioConfig":
        wl = changes.pop("workload", None)
        wl_changes = {k[3:]: changes.pop(k) for k in list(changes) if k.startswith("wl_")}
        cfg = dataclasses.replace(self, **changes)
        cfg.workload = wl if wl is not None else dataclasses.replace(self.workload, **wl_changes)
        return cfg

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ScenarioConfig":
        doc = dict(doc)
        job = None
        if "operators" in doc:
            job_doc = {k: doc.pop(k) for k in list(doc) if k in JobSpec.__dataclass_fields__}
            job = JobSpec.from_dict(job_doc)
        scenario = dict(doc.pop("scenario", {}) or {})
        scenario.update(doc)
        wl = WorkloadConfig(**scenario.pop("workload", {}) or {})
        if "checkpoints" in scenario:
            scenario["checkpoints"] = [tuple(c) for c in scenario["checkpoints"]]
        if job is not None:
            wl.seed = scenario.pop("seed", job.seed)
        return cls(workload=wl, job=job, **scenario)

    @classmethod
    def from_yaml(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(yaml.safe_load(text) or {})

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_yaml(fh.read())


@dataclass
class RunResult:
    config: ScenarioConfig
    protocol: Optional[str]
    sim: Simulation
    coordinator: ScaleCoordinator
    metrics: MetricsReport
    final_state: Dict[bytes, Any]
    emitted: int
    authoritative: bool
    stuck: bool

    @property
    def trace(self) -> Trace:
        return self.sim.trace

    @property
    def protocol_metrics(self) -> Dict[str, Any]:
        out = {}
        for s in self.coordinator.sessions:
            out.update(s.protocol.metrics())
        return out


_workload_cache: Dict[Tuple, Workload] = {}


def workload_for(cfg: WorkloadConfig) -> Workload:
    key = tuple(sorted(cfg.to_dict().items()))
    wl = _workload_cache.get(key)
    if wl is None:
        if len(_workload_cache) > 16:
            _workload_cache.clear()
        wl = _workload_cache[key] = generate_workload(cfg)
    return wl


def prepare(cfg: ScenarioConfig, protocol: Optional[str] = None, scale: bool = True,
            workload: Optional[Workload] = None, **options):
    """Build the simulation and coordinator, and schedule scaling and checkpoints."""
    job = cfg.build_job()
    wl = workload if workload is not None else workload_for(cfg.workload)
    sim = Simulation(job, wl, trace_records=cfg.trace_records)
    popts = {"bandwidth": cfg.bandwidth, "chunk_overhead": cfg.chunk_overhead}
    popts.update(cfg.protocol_options)
    popts.update(options)
    coord = ScaleCoordinator(sim, subscale_size=cfg.subscale_size, node_cap=cfg.node_cap,
                             protocol_options=popts)
    proto = protocol or cfg.protocol
    if scale and proto not in (None, "none"):
        coord.schedule(ScaleRequest(cfg.scale_operator, cfg.new_parallelism, proto,
                                    cfg.scale_tick))
    for cid, tick in cfg.checkpoints:
        coord.schedule_checkpoint(cid, tick)
    return sim, coord


def finish(cfg: ScenarioConfig, sim: Simulation, coord: ScaleCoordinator,
           protocol: Optional[str]) -> RunResult:
    stuck = bool(coord.active) or sim.in_flight() > 0 or any(
        i.path_inbox or i.prio_queue for i in sim.instances.values() if not i.closed)
    if stuck:
        raise StreamScaleError(
            f"{protocol}: run ended with unfinished work "
            f"(active={sorted(coord.active)}, in_flight={sim.in_flight()})")
    metrics = compute_metrics(sim.trace, stab_window=cfg.stab_window, threshold=cfg.threshold)
    authoritative = all(s.protocol.authoritative for s in coord.sessions)
    emitted = sum(n for _, n in sim.emitted_counts().values())
    return RunResult(cfg, protocol, sim, coord, metrics, sim.final_state(cfg.scale_operator),
                     emitted, authoritative, stuck)


def run_scenario(cfg: ScenarioConfig, protocol: Optional[str] = None, scale: bool = True,
                 workload: Optional[Workload] = None, **options) -> RunResult:
    """Run ``cfg`` to completion; ``scale=False`` gives the no-scale reference run."""
    proto = protocol or cfg.protocol
    sim, coord = prepare(cfg, proto, scale, workload, **options)
    sim.run()
    return finish(cfg, sim, coord, proto if scale else None)


def reference_run(cfg: ScenarioConfig, workload: Optional[Workload] = None) -> RunResult:
    return run_scenario(cfg, scale=False, workload=workload)
