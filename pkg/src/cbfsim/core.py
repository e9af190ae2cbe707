"""Shared vocabulary: geometry, identities, packets, time and CBF parameters.

Simulation time is an integer number of microseconds everywhere.  Millisecond
quantities from the protocol (timers, lifetimes) are converted at the edges with
:func:`ms_to_us`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

US_PER_MS = 1_000
US_PER_S = 1_000_000

NodeId = int


def ms_to_us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


def s_to_us(s: float) -> int:
    return int(round(s * US_PER_S))


class Position(NamedTuple):
    x: float
    y: float


def distance(a: Position, b: Position) -> float:
    """Euclidean distance in meters."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass(frozen=True, slots=True)
class PositionVector:
    position: Position
    timestamp_us: int
    accuracy: bool = True


class PacketId(NamedTuple):
    source: NodeId
    sequence: int


class Priority(enum.IntEnum):
    TC0 = 0
    TC1 = 1
    TC2 = 2
    TC3 = 3


@dataclass(frozen=True, slots=True)
class TrafficClass:
    priority: Priority
    scf: bool = False


DENM_SOURCE_TC = TrafficClass(Priority.TC0)
DENM_FORWARD_TC = TrafficClass(Priority.TC3)
CAM_TC = TrafficClass(Priority.TC2)

DENM_SIZE = 301
CAM_SIZE = 285


@dataclass(frozen=True, slots=True)
class DestinationArea:
    """Rectangular destination area.

    ``orientation`` is the angle (radians, counter-clockwise from +x) of the
    long axis.  Points on the border are inside.
    """

    center: Position
    half_length: float
    half_width: float
    orientation: float = 0.0

    def local(self, p: Position) -> tuple[float, float]:
        dx = p[0] - self.center[0]
        dy = p[1] - self.center[1]
        if self.orientation == 0.0:
            return dx, dy
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        return dx * c + dy * s, -dx * s + dy * c

    def contains(self, p: Position) -> float:
        """Geometric indicator: >= 0 inside or on the border, < 0 outside."""
        u, v = self.local(p)
        return min(1.0 - (u / self.half_length) ** 2, 1.0 - (v / self.half_width) ** 2)

    def inside(self, p: Position) -> bool:
        return self.contains(p) >= 0.0

    def inside_many(self, x, y):
        """Boolean mask over coordinate arrays (numpy)."""
        dx = x - self.center[0]
        dy = y - self.center[1]
        if self.orientation != 0.0:
            c, s = math.cos(self.orientation), math.sin(self.orientation)
            dx, dy = dx * c + dy * s, -dx * s + dy * c
        return ((dx / self.half_length) ** 2 <= 1.0) & ((dy / self.half_width) ** 2 <= 1.0)


def contains(area: DestinationArea, p: Position) -> float:
    return area.contains(p)


@dataclass(frozen=True, slots=True)
class GbcPacket:
    """GeoBroadcast network PDU.

    ``ll_dest`` is ``None`` for the link-layer broadcast address, otherwise the
    unicast next hop.  ``lifetime_ms`` is the remaining lifetime and is only
    decremented while the packet sits in the GeoNetworking layer.
    """

    id: PacketId
    source_pv: PositionVector
    area: DestinationArea
    rhl: int
    lifetime_ms: float
    tc: TrafficClass
    size: int = DENM_SIZE
    ll_dest: Optional[NodeId] = None
    generated_at_us: int = 0

    @property
    def is_broadcast(self) -> bool:
        return self.ll_dest is None


@dataclass(frozen=True, slots=True)
class CamFrame:
    sender: NodeId
    pv: PositionVector
    size: int = CAM_SIZE
    generated_at_us: int = 0


@dataclass(frozen=True)
class CbfParams:
    t_max_ms: float = 100.0
    t_min_ms: float = 1.0
    dist_max_m: float = 1000.0

    def __post_init__(self):
        if not 0 < self.t_min_ms < self.t_max_ms:
            raise ValueError(f"need 0 < t_min < t_max, got {self.t_min_ms}, {self.t_max_ms}")
        if self.dist_max_m <= 0:
            raise ValueError("dist_max must be positive")


def compute_cbf_timer(dist: float, params: CbfParams = CbfParams()) -> float:
    """Contention timer in milliseconds for a receiver ``dist`` meters from the sender."""
    if dist > params.dist_max_m:
        return params.t_min_ms
    slope = (params.t_max_ms - params.t_min_ms) / params.dist_max_m
    return params.t_max_ms - slope * dist


class Algorithm(str, enum.Enum):
    ETSI = "etsi"
    DPD = "dpd"
    GPC = "gpc"
    FOT = "fot"

    @classmethod
    def parse(cls, name: str) -> "Algorithm":
        try:
            return cls(name.lower())
        except ValueError:
            valid = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown algorithm {name!r}; valid: {valid}") from None

    @property
    def dpd(self) -> bool:
        return self is not Algorithm.ETSI

    @property
    def gpc(self) -> bool:
        return self in (Algorithm.GPC, Algorithm.FOT)

    @property
    def fot(self) -> bool:
        return self is Algorithm.FOT

    @property
    def border_suppression(self) -> bool:
        """Default for the broadcast-address rule at the area border."""
        return self is not Algorithm.ETSI
