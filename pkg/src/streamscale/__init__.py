"""Miniature stateful stream-processing runtime with live rescaling protocols."""
from .control import (
    MigrationPlan, ScaleCoordinator, ScaleRequest, Subscale, divide_subscales,
    next_subscale, plan_repartition,
)
from .runtime.engine import Simulation
from .runtime.graph import JobSpec, build_graph, three_operator_job
from .state import KeyedStateStore, KgStatus, RoutingTable, key_to_keygroup

__version__ = "0.1.0"

__all__ = [
    "Simulation", "JobSpec", "build_graph", "three_operator_job",
    "ScaleCoordinator", "ScaleRequest", "MigrationPlan", "Subscale",
    "plan_repartition", "divide_subscales", "next_subscale",
    "KeyedStateStore", "KgStatus", "RoutingTable", "key_to_keygroup",
]
