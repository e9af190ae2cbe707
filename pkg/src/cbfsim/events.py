"""Deterministic event queue ordered by (fire time, insertion sequence)."""

from __future__ import annotations

import enum
import heapq
from typing import Callable


class InvariantViolation(RuntimeError):
    """A simulation property was broken; ``prop`` names it."""

    def __init__(self, prop: str, detail: str = ""):
        self.prop = prop
        super().__init__(f"invariant violated: {prop}" + (f" ({detail})" if detail else ""))


class EventKind(enum.IntEnum):
    CBF_TIMER_EXPIRY = 0
    DCC_GATE_OPEN = 1
    TX_START = 2
    TX_END = 3
    MOBILITY_STEP = 4
    CAM_TRIGGER = 5
    DENM_TRIGGER = 6
    CBR_WINDOW = 7
    SCRIPT = 8


class Event:
    __slots__ = ("fire_at", "sequence", "kind", "fn", "args", "cancelled", "fired")

    def __init__(self, fire_at: int, sequence: int, kind: EventKind, fn: Callable, args: tuple):
        self.fire_at = fire_at
        self.sequence = sequence
        self.kind = kind
        self.fn = fn
        self.args = args
        self.cancelled = False
        self.fired = False

    @property
    def pending(self) -> bool:
        return not (self.cancelled or self.fired)

    def __repr__(self):
        return f"Event({self.kind.name}@{self.fire_at}#{self.sequence})"


class EventQueue:
    def __init__(self):
        self.now = 0
        self.processed = 0
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, fire_at: int, kind: EventKind, fn: Callable, *args) -> Event:
        if fire_at < self.now:
            raise InvariantViolation("event-in-past", f"{kind.name} at {fire_at} < now {self.now}")
        ev = Event(fire_at, self._seq, kind, fn, args)
        self._seq += 1
        heapq.heappush(self._heap, (fire_at, ev.sequence, ev))
        return ev

    def cancel(self, ev: Event | None) -> None:
        if ev is not None and not ev.fired:
            ev.cancelled = True

    def run(self, until: int) -> None:
        """Process every event with ``fire_at <= until``; the clock ends at ``until``."""
        heap = self._heap
        pop = heapq.heappop
        while heap and heap[0][0] <= until:
            fire_at, _, ev = pop(heap)
            if ev.cancelled:
                continue
            if fire_at < self.now:
                raise InvariantViolation("event-order", f"{ev!r} popped at now={self.now}")
            self.now = fire_at
            ev.fired = True
            self.processed += 1
            ev.fn(*ev.args)
        if until > self.now:
            self.now = until
