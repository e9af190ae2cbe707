"""Adaptive DCC gatekeeper: per traffic-class queues and LIMERIC-style rate control."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from cbfsim.core import Priority


@dataclass(frozen=True)
class DccParams:
    # Gains per 200 ms update.  Stability needs roughly beta * K < 2 for K
    # stations sharing the channel, so beta stays small for dense highways.
    alpha: float = 0.05
    beta: float = 0.00375
    cbr_target: float = 0.68
    delta_min: float = 0.0006
    delta_max: float = 0.03
    gap_min_us: int = 25_000
    gap_max_us: int = 1_000_000
    queue_capacity: int = 4
    window_us: int = 100_000
    # Number of CBR windows averaged per rate update.
    windows_per_update: int = 2
    initial_delta: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.delta_min <= self.delta_max:
            raise ValueError("need 0 < delta_min <= delta_max")
        if not 0 < self.gap_min_us <= self.gap_max_us:
            raise ValueError("need 0 < gap_min <= gap_max")
        if self.queue_capacity < 1:
            raise ValueError("queue capacity must be >= 1")


def gap_us(airtime_us: int, delta: float, params: DccParams) -> int:
    """Waiting time after a frame of ``airtime_us`` at permitted share ``delta``."""
    raw = airtime_us / delta
    return int(round(min(max(raw, params.gap_min_us), params.gap_max_us)))


@dataclass(frozen=True)
class CbrSample:
    window_start_us: int
    busy_us: int
    window_us: int

    def __post_init__(self):
        if not 0 <= self.busy_us <= self.window_us:
            raise ValueError("busy time must lie within the window")

    @property
    def ratio(self) -> float:
        return self.busy_us / self.window_us


@dataclass(slots=True)
class QueuedFrame:
    frame: Any
    priority: Priority
    enqueued_at: int
    expires_at: Optional[int] = None


@dataclass
class DccGatekeeper:
    params: DccParams = field(default_factory=DccParams)
    t_go: int = 0
    delta: float = 0.0
    cbr_local: float = 0.0
    in_flight: bool = False
    last_release: Optional[int] = None
    drops: int = 0
    expired: int = 0

    def __post_init__(self):
        self.queues: list[deque[QueuedFrame]] = [deque() for _ in Priority]
        if not self.delta:
            self.delta = self.params.initial_delta or self.params.delta_max

    def enqueue(self, frame, priority: Priority, now: int, expires_at: Optional[int] = None):
        """Append to the class queue; returns the frame dropped on overflow, if any."""
        q = self.queues[priority]
        dropped = None
        if len(q) >= self.params.queue_capacity:
            dropped = q.popleft()
            self.drops += 1
        q.append(QueuedFrame(frame, priority, now, expires_at))
        return dropped

    def pending(self) -> bool:
        return any(self.queues)

    def gate_open(self, now: int) -> bool:
        return not self.in_flight and now >= self.t_go

    def dequeue(self, now: int) -> Optional[QueuedFrame]:
        """Release the head of the highest-priority non-empty queue.

        Frames whose lifetime ran out while queued are discarded here.  The
        gate closes until :meth:`on_transmission_complete`; ``t_go`` is set to
        the earliest instant the law could reopen it.
        """
        if not self.gate_open(now):
            return None
        for q in self.queues:
            while q:
                item = q.popleft()
                if item.expires_at is not None and now >= item.expires_at:
                    self.expired += 1
                    continue
                self.in_flight = True
                self.last_release = now
                self.t_go = now + self.params.gap_min_us
                return item
        return None

    def on_transmission_complete(self, now: int, airtime_us: int) -> None:
        self.in_flight = False
        self.t_go = now + gap_us(airtime_us, self.delta, self.params)

    def update_rate(self, cbr_measured: float) -> None:
        p = self.params
        self.cbr_local = cbr_measured
        d = (1.0 - p.alpha) * self.delta + p.beta * (p.cbr_target - cbr_measured)
        self.delta = min(max(d, p.delta_min), p.delta_max)

    def gate_schedule_view(self) -> int:
        return self.t_go


def fixed_point_delta(cbr: float, params: DccParams) -> float:
    """Steady state of :meth:`DccGatekeeper.update_rate` under a constant CBR."""
    d = params.beta * (params.cbr_target - cbr) / params.alpha
    return min(max(d, params.delta_min), params.delta_max)
