"""Job specifications and the physical dataflow graph built from them."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import yaml

from ..errors import DeployConflict, GraphCycle, InvalidPartitioning, UnknownOperator
from ..state import RoutingTable
from .channel import Channel

PARTITIONINGS = ("keyed", "broadcast", "forward")
OPERATOR_KINDS = ("source", "keyed_aggregate", "sliding_window", "sink")


@dataclass
class OperatorSpec:
    id: str
    kind: str
    parallelism: int = 1
    process_ticks: int = 1
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass
class EdgeSpec:
    src: str
    dst: str
    partitioning: str = "forward"


@dataclass
class JobSpec:
    operators: List[OperatorSpec]
    edges: List[EdgeSpec]
    num_keygroups: int = 128
    channel_capacity: int = 1000
    buffer_size: int = 256
    latency_ticks: int = 1
    jitter_ticks: int = 0
    control_ticks: int = 1
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "JobSpec":
        doc = dict(doc)
        ops = [OperatorSpec(**o) for o in doc.pop("operators")]
        edges = [EdgeSpec(**e) for e in doc.pop("edges")]
        return cls(operators=ops, edges=edges, **doc)

    @classmethod
    def from_yaml(cls, text: str) -> "JobSpec":
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def load(cls, path) -> "JobSpec":
        with open(path) as fh:
            return cls.from_yaml(fh.read())

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def operator(self, op_id: str) -> OperatorSpec:
        for op in self.operators:
            if op.id == op_id:
                return op
        raise UnknownOperator(op_id)


def three_operator_job(parallelism: int = 2, num_keygroups: int = 32, sources: int = 2,
                       kind: str = "keyed_aggregate", process_ticks: int = 1,
                       params: Optional[Dict[str, Any]] = None, **net) -> JobSpec:
    """generator -> keyed operator -> sink."""
    return JobSpec(
        operators=[
            OperatorSpec("gen", "source", sources, process_ticks=0),
            OperatorSpec("agg", kind, parallelism, process_ticks=process_ticks,
                         params=dict(params or {})),
            OperatorSpec("sink", "sink", 1, process_ticks=0),
        ],
        edges=[EdgeSpec("gen", "agg", "keyed"), EdgeSpec("agg", "sink", "forward")],
        num_keygroups=num_keygroups,
        **net,
    )


@dataclass
class OperatorNode:
    id: str
    kind: str
    parallelism: int
    instance_ids: List[str]
    spec: OperatorSpec


def instance_name(op_id: str, index: int) -> str:
    return f"{op_id}#{index}"


def split_instance(name: str) -> Tuple[str, int]:
    op, _, idx = name.rpartition("#")
    return op, int(idx)


class DataflowGraph:
    """Operators, their instances, channels between instances and routing tables.

    Routing tables live on keyed edges, one per upstream instance, and map
    key-groups to downstream instance indices.
    """

    def __init__(self, job: JobSpec):
        self.job = job
        self.num_keygroups = job.num_keygroups
        self.operators: Dict[str, OperatorNode] = {}
        self.edges: List[EdgeSpec] = list(job.edges)
        self.channels: Dict[Tuple[str, str], Channel] = {}
        self.routing: Dict[Tuple[str, str], RoutingTable] = {}
        for spec in job.operators:
            ids = [instance_name(spec.id, i) for i in range(spec.parallelism)]
            self.operators[spec.id] = OperatorNode(spec.id, spec.kind, spec.parallelism,
                                                   ids, spec)

    @property
    def sources(self) -> List[str]:
        return [o.id for o in self.operators.values() if o.kind == "source"]

    @property
    def sinks(self) -> List[str]:
        return [o.id for o in self.operators.values() if o.kind == "sink"]

    def op(self, op_id: str) -> OperatorNode:
        try:
            return self.operators[op_id]
        except KeyError:
            raise UnknownOperator(op_id) from None

    def out_edges(self, op_id: str) -> List[EdgeSpec]:
        return [e for e in self.edges if e.src == op_id]

    def in_edges(self, op_id: str) -> List[EdgeSpec]:
        return [e for e in self.edges if e.dst == op_id]

    def predecessors(self, op_id: str) -> List[str]:
        return [e.src for e in self.in_edges(op_id)]

    def successors(self, op_id: str) -> List[str]:
        return [e.dst for e in self.out_edges(op_id)]

    def edge(self, src: str, dst: str) -> EdgeSpec:
        for e in self.edges:
            if e.src == src and e.dst == dst:
                return e
        raise UnknownOperator(f"{src}->{dst}")

    def topological_order(self) -> List[str]:
        indeg = {op: 0 for op in self.operators}
        for e in self.edges:
            indeg[e.dst] += 1
        ready = [op for op in self.operators if indeg[op] == 0]
        order = []
        while ready:
            op = ready.pop(0)
            order.append(op)
            for e in self.out_edges(op):
                indeg[e.dst] -= 1
                if indeg[e.dst] == 0:
                    ready.append(e.dst)
        if len(order) != len(self.operators):
            raise GraphCycle("dataflow graph contains a cycle")
        return order

    def channel(self, sender: str, receiver: str) -> Channel:
        return self.channels[(sender, receiver)]

    def inputs_of(self, inst: str) -> List[Channel]:
        return [ch for (s, r), ch in self.channels.items() if r == inst]

    def outputs_of(self, inst: str) -> List[Channel]:
        return [ch for (s, r), ch in self.channels.items() if s == inst]

    def _connect(self, sender: str, receiver: str) -> Channel:
        if (sender, receiver) in self.channels:
            return self.channels[(sender, receiver)]
        ch = Channel(sender, receiver, capacity=self.job.channel_capacity,
                     buffer_size=self.job.buffer_size)
        ch.index = len(self.channels)
        self.channels[(sender, receiver)] = ch
        return ch

    def _wire_edge(self, e: EdgeSpec) -> None:
        up, down = self.op(e.src), self.op(e.dst)
        for u in up.instance_ids:
            for d in down.instance_ids:
                self._connect(u, d)
            if e.partitioning == "keyed" and (u, e.dst) not in self.routing:
                self.routing[(u, e.dst)] = RoutingTable.uniform(down.parallelism,
                                                                self.num_keygroups)

    def wire(self) -> None:
        for e in self.edges:
            self._wire_edge(e)

    def routing_tables_into(self, op_id: str) -> List[Tuple[str, RoutingTable]]:
        return [(u, t) for (u, d), t in self.routing.items() if d == op_id]

    def owner_map(self, op_id: str) -> List[int]:
        tables = self.routing_tables_into(op_id)
        if not tables:
            raise UnknownOperator(f"{op_id} has no keyed inputs")
        return tables[0][1].owners()

    def add_instance(self, op_id: str, index: Optional[int] = None) -> str:
        node = self.op(op_id)
        index = len(node.instance_ids) if index is None else index
        name = instance_name(op_id, index)
        if name in node.instance_ids:
            raise DeployConflict(f"instance {name} already exists")
        node.instance_ids.append(name)
        node.parallelism = len(node.instance_ids)
        for e in self.in_edges(op_id):
            for u in self.op(e.src).instance_ids:
                self._connect(u, name)
        for e in self.out_edges(op_id):
            for d in self.op(e.dst).instance_ids:
                self._connect(name, d)
            if e.partitioning == "keyed":
                # new upstream instance adopts the routing of an existing peer
                peer = next(t for (u, d), t in self.routing.items()
                            if d == e.dst and u != name)
                self.routing[(name, e.dst)] = peer.copy()
        return name

    def remove_instance(self, op_id: str, name: str) -> None:
        node = self.op(op_id)
        node.instance_ids.remove(name)
        node.parallelism = len(node.instance_ids)
        for key in [k for k in self.channels if name in k]:
            self.channels.pop(key).close()
        for key in [k for k in self.routing if k[0] == name]:
            del self.routing[key]


def build_graph(job: JobSpec) -> DataflowGraph:
    """Validate ``job`` and construct the physical graph with uniform routing."""
    ids = [o.id for o in job.operators]
    if len(set(ids)) != len(ids):
        raise InvalidPartitioning("duplicate operator id")
    if not any(o.kind == "source" for o in job.operators):
        raise InvalidPartitioning("job needs at least one source")
    if not any(o.kind == "sink" for o in job.operators):
        raise InvalidPartitioning("job needs at least one sink")
    if job.num_keygroups < 1:
        raise InvalidPartitioning("num_keygroups must be >= 1")
    for o in job.operators:
        if o.kind not in OPERATOR_KINDS:
            raise InvalidPartitioning(f"unknown operator kind {o.kind!r}")
        if o.parallelism < 1:
            raise InvalidPartitioning(f"{o.id}: parallelism must be >= 1")
        if o.parallelism > job.num_keygroups:
            raise InvalidPartitioning(
                f"{o.id}: parallelism {o.parallelism} exceeds {job.num_keygroups} key-groups")
    for e in job.edges:
        if e.src not in ids or e.dst not in ids:
            raise UnknownOperator(f"edge {e.src}->{e.dst}")
        if e.src == e.dst:
            raise GraphCycle(f"self-loop on {e.src}")
        if e.partitioning not in PARTITIONINGS:
            raise InvalidPartitioning(f"unknown partitioning {e.partitioning!r}")
    graph = DataflowGraph(job)
    graph.topological_order()
    graph.wire()
    return graph
