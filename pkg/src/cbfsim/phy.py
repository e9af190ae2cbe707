"""Shared broadcast channel: unit-disc reception, CSMA access and collisions.

Reception is decided geometrically: a frame reaches every node within the
transmission range of its origin unless another transmission overlapping in
time has that node inside its interference range.  There is no capture, so
both frames are lost at common receivers.  Per-node arrays are numpy vectors
indexed by node id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np

from cbfsim.events import EventKind, EventQueue


@dataclass(frozen=True)
class RadioParams:
    tx_power_mw: float = 20.0
    pathloss_exponent: float = 2.0
    datarate_bps: float = 6_000_000.0
    max_range_m: float = 778.0
    # Interference and carrier-sense range as a multiple of the transmission range.
    cs_factor: float = 1.5
    preamble_us: int = 40
    aifs_us: int = 58
    slot_us: int = 13
    cw: int = 15

    @property
    def carrier_sense_range_m(self) -> float:
        return self.cs_factor * self.max_range_m

    @property
    def sensitivity_mw(self) -> float:
        # Threshold chosen so that a lone frame decodes at exactly max_range.
        return rx_power_mw(self.max_range_m, self)


def rx_power_mw(dist: float, params: RadioParams) -> float:
    if dist <= 1.0:
        return params.tx_power_mw
    return params.tx_power_mw * dist ** (-params.pathloss_exponent)


def airtime(size: int, params: RadioParams = RadioParams()) -> int:
    """Frame duration in microseconds."""
    if size <= 0:
        raise ValueError("frame size must be positive")
    return params.preamble_us + math.ceil(size * 8 * 1_000_000 / params.datarate_bps)


class Transmission:
    __slots__ = ("sender", "start", "airtime", "origin", "frame", "range_m",
                 "in_range", "cs", "corrupt")

    def __init__(self, sender, start, airtime_us, origin, frame, range_m, in_range, cs):
        self.sender = sender
        self.start = start
        self.airtime = airtime_us
        self.origin = origin
        self.frame = frame
        self.range_m = range_m
        self.in_range = in_range
        self.cs = cs
        self.corrupt = np.zeros_like(in_range)

    @property
    def end(self) -> int:
        return self.start + self.airtime


class ChannelListener(Protocol):
    def tx_started(self, tx: Transmission) -> None: ...

    def tx_ended(self, tx: Transmission, delivered: np.ndarray) -> None: ...

    def tx_completed(self, tx: Transmission) -> None: ...


class Channel:
    """Broadcast medium shared by every node of one run.

    ``positions`` is any object exposing ``x`` and ``y`` float arrays; they are
    read at the start of every transmission.

    MAC state lives in per-node arrays.  Channel access attempts that fall on
    the same microsecond share one event, so a busy medium with hundreds of
    deferring stations costs a handful of events per frame.
    """

    IDLE, COUNTING, DEFERRING = 0, 1, 2

    def __init__(self, positions, params: RadioParams, queue: EventQueue,
                 rng: np.random.Generator, listener: ChannelListener):
        self.positions = positions
        self.params = params
        self.queue = queue
        self.rng = rng
        self.listener = listener
        n = len(positions.x)
        self.busy_count = np.zeros(n, dtype=np.int32)
        self.busy_since = np.zeros(n, dtype=np.int64)
        self.busy_acc = np.zeros(n, dtype=np.int64)
        self.window_start = 0
        self.active: list[Transmission] = []
        self.range_override: dict[int, float] = {}
        self.transmissions = 0
        self.state = np.zeros(n, dtype=np.int8)
        self.slots = np.zeros(n, dtype=np.int64)
        self.idle_at = np.zeros(n, dtype=np.int64)
        self.fresh = np.zeros(n, dtype=bool)
        self._frames: dict[int, Any] = {}
        self._batches: dict[int, list] = {}

    def busy(self, node: int) -> bool:
        return bool(self.busy_count[node])

    def mac_busy(self, node: int) -> bool:
        return node in self._frames

    def access(self, node: int, frame: Any, now: int) -> None:
        """CSMA entry point for a frame released by the DCC gate."""
        if node in self._frames:
            raise RuntimeError(f"node {node} already has a frame at the MAC")
        self._frames[node] = frame
        if self.busy_count[node] == 0:
            self.idle_at[node] = now
            self.fresh[node] = True
            self.slots[node] = 0
            self.state[node] = self.COUNTING
            self._add_attempt(now + self.params.aifs_us, [node])
        else:
            self.fresh[node] = False
            self.slots[node] = self._draw_backoff()
            self.state[node] = self.DEFERRING

    def _draw_backoff(self, k: int | None = None):
        if k is None:
            return int(self.rng.integers(self.params.cw))
        return self.rng.integers(self.params.cw, size=k)

    def _add_attempt(self, at: int, nodes) -> None:
        batch = self._batches.get(at)
        if batch is None:
            self._batches[at] = batch = []
            self.queue.schedule(at, EventKind.TX_START, self._attempt, at)
        batch.extend(nodes)

    def _attempt(self, at: int) -> None:
        nodes = np.asarray(self._batches.pop(at), dtype=np.int64)
        now = self.queue.now
        p = self.params
        busy = self.busy_count[nodes] > 0
        if busy.any():
            # Medium went busy during AIFS or backoff: freeze the remaining slots.
            b = nodes[busy]
            counted = (self.busy_since[b] - self.idle_at[b] - p.aifs_us) // p.slot_us
            counted = np.maximum(counted, 0)
            slots = np.maximum(self.slots[b] - counted, 0)
            redraw = (counted == 0) & self.fresh[b]
            if redraw.any():
                slots[redraw] = self._draw_backoff(int(redraw.sum()))
            self.slots[b] = slots
            self.fresh[b] = False
            self.state[b] = self.DEFERRING
        for node in nodes[~busy].tolist():
            self._start(node, now)

    def _start(self, node: int, now: int) -> None:
        pos = self.positions
        ox, oy = float(pos.x[node]), float(pos.y[node])
        r = self.range_override.get(node, self.params.max_range_m)
        d2 = (pos.x - ox) ** 2 + (pos.y - oy) ** 2
        in_range = d2 <= r * r
        in_range[node] = False
        cs = d2 <= (r * self.params.cs_factor) ** 2
        frame = self._frames[node]
        tx = Transmission(node, now, airtime(frame.size, self.params), (ox, oy), frame, r, in_range, cs)
        self.state[node] = self.IDLE
        for other in self.active:
            other.corrupt |= cs
            tx.corrupt |= other.cs
        bc = self.busy_count
        fresh = cs & (bc == 0)
        self.busy_since[fresh] = now
        bc[cs] += 1
        self.active.append(tx)
        self.transmissions += 1
        self.listener.tx_started(tx)
        self.queue.schedule(now + tx.airtime, EventKind.TX_END, self._end, tx)

    def _end(self, tx: Transmission) -> None:
        now = self.queue.now
        self.active.remove(tx)
        bc = self.busy_count
        bc[tx.cs] -= 1
        idle = tx.cs & (bc == 0)
        self.busy_acc[idle] += now - self.busy_since[idle]
        delivered = np.flatnonzero(tx.in_range & ~tx.corrupt)
        del self._frames[tx.sender]
        self.listener.tx_completed(tx)
        self.listener.tx_ended(tx, delivered)
        resume = np.flatnonzero(idle & (self.state == self.DEFERRING))
        if resume.size:
            p = self.params
            self.idle_at[resume] = now
            self.state[resume] = self.COUNTING
            fire = now + p.aifs_us + self.slots[resume] * p.slot_us
            for t in np.unique(fire).tolist():
                self._add_attempt(t, resume[fire == t].tolist())

    def close_window(self, now: int) -> np.ndarray:
        """Busy fraction per node since the previous call; starts a new window."""
        busy = self.busy_count > 0
        self.busy_acc[busy] += now - self.busy_since[busy]
        self.busy_since[busy] = now
        length = now - self.window_start
        sample = self.busy_acc / length if length > 0 else np.zeros(len(self.busy_acc))
        self.busy_acc[:] = 0
        self.window_start = now
        return np.minimum(sample, 1.0)
