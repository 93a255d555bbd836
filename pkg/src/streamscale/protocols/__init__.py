"""Scaling protocols and the name -> class registry."""
from __future__ import annotations

from .base import MigrationPath, ScalingProtocol
from .drrs import DRRS
from .fetch import FetchOnDemand
from .otfs import AllAtOnce, FluidOTFS
from .stop_restart import StopRestart
from .unbound import Unbound

PROTOCOLS = {
    cls.name: cls
    for cls in (DRRS, FluidOTFS, AllAtOnce, StopRestart, FetchOnDemand, Unbound)
}


def protocol_class(name: str):
    try:
        return PROTOCOLS[name]
    except KeyError:
        raise ValueError(f"unknown protocol {name!r}; choose from {sorted(PROTOCOLS)}") from None


def make_protocol(name: str, sim, session, coordinator, **options) -> ScalingProtocol:
    return protocol_class(name)(sim, session, coordinator, **options)


__all__ = [
    "PROTOCOLS", "make_protocol", "protocol_class", "ScalingProtocol", "MigrationPath",
    "DRRS", "FluidOTFS", "AllAtOnce", "StopRestart", "FetchOnDemand", "Unbound",
]
