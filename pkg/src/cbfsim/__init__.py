"""Discrete-event simulator for multi-hop GeoBroadcast contention-based forwarding."""

from cbfsim.core import (
    Algorithm,
    CbfParams,
    DestinationArea,
    GbcPacket,
    PacketId,
    Position,
    PositionVector,
    Priority,
    TrafficClass,
    compute_cbf_timer,
    contains,
    distance,
)

__all__ = [
    "Algorithm",
    "CbfParams",
    "DestinationArea",
    "GbcPacket",
    "PacketId",
    "Position",
    "PositionVector",
    "Priority",
    "TrafficClass",
    "compute_cbf_timer",
    "contains",
    "distance",
]

__version__ = "0.1.0"
