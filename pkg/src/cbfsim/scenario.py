"""Highway world: placement, mobility, DENM schedule and CAM triggering.

Node 0 is the stationary source vehicle on the shoulder; nodes 1..N are the
moving vehicles.  Lanes 0..L-1 carry +x traffic at ``y > 0``; lanes L..2L-1
carry -x traffic at ``y < 0``.  The source stands beside the -x carriageway,
so the area of interest extends towards larger x (where approaching traffic
comes from) and slightly past the source.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cbfsim.core import (
    DENM_SIZE,
    DENM_SOURCE_TC,
    DestinationArea,
    GbcPacket,
    PacketId,
    Position,
    PositionVector,
    s_to_us,
)

VALID_DENSITIES = (10, 20, 30, 40, 50)
SOURCE = 0


@dataclass(frozen=True)
class HighwayConfig:
    length_m: float = 5000.0
    lanes_per_direction: int = 4
    lane_width_m: float = 3.5
    density: int = 10
    # Mean desired speed per lane, outermost lane first.
    lane_speeds_ms: tuple[float, ...] = (22.0, 25.0, 28.0, 31.0)
    speed_jitter_ms: float = 1.5
    headway_s: float = 2.0
    source_x_m: float = 500.0

    def __post_init__(self):
        if self.length_m <= 0:
            raise ValueError("length must be positive")
        if self.lanes_per_direction < 1:
            raise ValueError("need at least one lane per direction")
        if len(self.lane_speeds_ms) != self.lanes_per_direction:
            raise ValueError("lane_speeds_ms needs one entry per lane")
        if self.density <= 0:
            raise ValueError(f"density must be positive, got {self.density}")
        if not 0 <= self.source_x_m <= self.length_m:
            raise ValueError("source must lie on the road")

    @property
    def lanes(self) -> int:
        return 2 * self.lanes_per_direction

    @property
    def vehicles_per_lane(self) -> int:
        return int(round(self.density * self.length_m / 1000.0))

    @property
    def expected_vehicles(self) -> int:
        return self.vehicles_per_lane * self.lanes

    def lane_y(self, lane: int) -> float:
        k = lane % self.lanes_per_direction
        y = (k + 0.5) * self.lane_width_m
        return y if lane < self.lanes_per_direction else -y

    def lane_direction(self, lane: int) -> int:
        return 1 if lane < self.lanes_per_direction else -1

    @property
    def source_y_m(self) -> float:
        # Hard shoulder next to the outermost -x lane.
        return -(self.lanes_per_direction + 0.5) * self.lane_width_m

    @property
    def half_width_m(self) -> float:
        return (self.lanes_per_direction + 1) * self.lane_width_m


@dataclass(frozen=True)
class ScenarioSchedule:
    warmup_s: float = 10.0
    denm_interval_s: float = 1.0
    denm_count: int = 30
    measure_window_s: float = 35.0
    area_behind_m: float = 4000.0
    area_ahead_m: float = 100.0
    denm_lifetime_s: float = 10.0
    hop_limit: int = 10
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    # CAM triggering
    cam_distance_m: float = 4.0
    cam_min_interval_s: float = 0.1
    cam_max_interval_s: float = 1.0
    cam_check_s: float = 0.1
    mobility_step_s: float = 0.1

    def __post_init__(self):
        if self.denm_count < 0:
            raise ValueError("denm_count must be >= 0")
        if self.denm_interval_s <= 0:
            raise ValueError("denm interval must be positive")
        if self.hop_limit < 1:
            raise ValueError("hop limit must be >= 1")
        if self.area_behind_m <= 0 or self.area_ahead_m < 0:
            raise ValueError("bad area extent")
        if not 0 < self.cam_min_interval_s <= self.cam_max_interval_s:
            raise ValueError("need 0 < cam_min_interval <= cam_max_interval")
        if self.denm_count and self.measure_window_s < (self.denm_count - 1) * self.denm_interval_s:
            raise ValueError("measure window shorter than the DENM schedule")

    @property
    def end_s(self) -> float:
        return self.warmup_s + self.measure_window_s

    def denm_times_us(self) -> list[int]:
        return [s_to_us(self.warmup_s + k * self.denm_interval_s) for k in range(self.denm_count)]

    def area(self, cfg: HighwayConfig) -> DestinationArea:
        # Upstream of the -x carriageway is larger x.
        lo = cfg.source_x_m - self.area_ahead_m
        hi = cfg.source_x_m + self.area_behind_m
        return DestinationArea(Position((lo + hi) / 2, 0.0), (hi - lo) / 2, cfg.half_width_m)


@dataclass
class World:
    """Vehicle state as parallel arrays indexed by node id."""

    cfg: HighwayConfig
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray          # distance travelled along the lane's direction
    speed: np.ndarray
    desired: np.ndarray
    lane: np.ndarray       # -1 for the source on the shoulder
    rng: np.random.Generator = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.x)

    def position(self, node: int) -> Position:
        return Position(float(self.x[node]), float(self.y[node]))

    def _sync_xy(self, idx=slice(None)) -> None:
        lane = self.lane[idx]
        fwd = lane < self.cfg.lanes_per_direction
        self.x[idx] = np.where(fwd, self.s[idx], self.cfg.length_m - self.s[idx])

    def _draw_speeds(self, lanes: np.ndarray) -> np.ndarray:
        means = np.asarray(self.cfg.lane_speeds_ms)[lanes % self.cfg.lanes_per_direction]
        j = self.cfg.speed_jitter_ms
        return means + self.rng.uniform(-j, j, size=len(lanes))

    def step(self, dt_s: float) -> int:
        """Advance every moving vehicle; returns how many wrapped around."""
        cfg = self.cfg
        L = cfg.length_m
        moving = np.flatnonzero(self.lane >= 0)
        for lane in range(cfg.lanes):
            idx = moving[self.lane[moving] == lane]
            if idx.size == 0:
                continue
            order = idx[np.argsort(self.s[idx], kind="stable")]
            s = self.s[order]
            if order.size > 1:
                gap = np.roll(s, -1) - s
                gap[-1] += L
                # Never closer than the configured time headway to the leader.
                v = np.minimum(self.desired[order], gap / cfg.headway_s)
            else:
                v = self.desired[order]
            self.speed[order] = v
        self.s[moving] += self.speed[moving] * dt_s
        wrapped = moving[self.s[moving] >= L]
        if wrapped.size:
            self.s[wrapped] -= L
            self.desired[wrapped] = self._draw_speeds(self.lane[wrapped])
            self.speed[wrapped] = self.desired[wrapped]
        self._sync_xy(moving)
        return int(wrapped.size)


def generate_vehicles(cfg: HighwayConfig, placement: np.random.Generator,
                      speeds: np.random.Generator) -> World:
    """Uniform random placement per lane (Poisson spacing conditioned on the count)."""
    per_lane = cfg.vehicles_per_lane
    total = per_lane * cfg.lanes
    if total < 2:
        raise ValueError(f"density {cfg.density} on {cfg.length_m} m yields {total} vehicles; need >= 2")
    n = total + 1
    x = np.zeros(n)
    y = np.zeros(n)
    s = np.zeros(n)
    lane = np.full(n, -1, dtype=np.int64)
    for k in range(cfg.lanes):
        sl = slice(1 + k * per_lane, 1 + (k + 1) * per_lane)
        s[sl] = np.sort(placement.uniform(0.0, cfg.length_m, size=per_lane))
        lane[sl] = k
        y[sl] = cfg.lane_y(k)
    world = World(cfg, x, y, s, np.zeros(n), np.zeros(n), lane, speeds)
    world.desired[1:] = world._draw_speeds(lane[1:])
    world.speed[1:] = world.desired[1:]
    world._sync_xy(slice(1, None))
    world.x[SOURCE] = cfg.source_x_m
    world.y[SOURCE] = cfg.source_y_m
    return world


class DenmSource:
    """Facilities of the stationary source: sequence numbers from 0, one per trigger."""

    def __init__(self, node: int, schedule: ScenarioSchedule, area: DestinationArea):
        self.node = node
        self.schedule = schedule
        self.area = area
        self.next_seq = 0

    def make(self, pos: Position, now: int) -> GbcPacket:
        pid = PacketId(self.node, self.next_seq)
        self.next_seq += 1
        return GbcPacket(
            id=pid,
            source_pv=PositionVector(pos, now),
            area=self.area,
            rhl=self.schedule.hop_limit,
            lifetime_ms=self.schedule.denm_lifetime_s * 1000.0,
            tc=DENM_SOURCE_TC,
            size=DENM_SIZE,
            generated_at_us=now,
        )


def cam_interval_s(speed: np.ndarray, schedule: ScenarioSchedule, dcc_gap_s=0.0) -> np.ndarray:
    """Minimum CAM spacing: distance trigger or the DCC gate interval, whichever is
    longer, bounded to the allowed interval range."""
    with np.errstate(divide="ignore"):
        t = np.where(speed > 0, schedule.cam_distance_m / np.maximum(speed, 1e-12), np.inf)
    t = np.maximum(t, dcc_gap_s)
    return np.clip(t, schedule.cam_min_interval_s, schedule.cam_max_interval_s)
