"""Per-node GeoNetworking layer.

Receiver pipeline, the four area forwarding strategies (ETSI CBF, DPD, GPC,
FoT), the duplicate packet list and the greedy border rule.  A :class:`Router`
owns one node's protocol state and talks to the rest of the stack through its
``host`` (the simulation engine), which provides the clock, positions, the
location tables, the DCC gatekeepers and metric sinks.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from cbfsim.core import (
    DENM_FORWARD_TC,
    Algorithm,
    CbfParams,
    GbcPacket,
    NodeId,
    PacketId,
    Position,
    PositionVector,
    Priority,
    compute_cbf_timer,
    distance,
    ms_to_us,
)
from cbfsim.events import Event, EventKind, InvariantViolation

DPL_CAPACITY = 32
BC_BUFFER_CAPACITY = 16


@dataclass(frozen=True, slots=True)
class LocationTableEntry:
    node: NodeId
    pv: Optional[PositionVector]
    is_neighbour: bool
    last_update: int


class LocationTables:
    """Location tables of every node, stored as dense matrices.

    Element ``[n, owner]`` describes node ``n`` as seen by ``owner``.  A row is
    contiguous, so a broadcast from ``n`` updates all receivers in one slice.
    """

    def __init__(self, n: int):
        self.n = n
        self.x = np.zeros((n, n))
        self.y = np.zeros((n, n))
        self.t = np.full((n, n), -1, dtype=np.int64)
        self.acc = np.zeros((n, n), dtype=bool)
        self.neighbour = np.zeros((n, n), dtype=bool)
        self.has_neighbour = np.zeros(n, dtype=bool)
        self.last_update = np.full((n, n), -1, dtype=np.int64)

    def update(self, owners, node: NodeId, pv: PositionVector, now: int,
               neighbour: bool = False) -> None:
        """Overwrite ``node``'s position vector in the tables of ``owners``."""
        self.x[node, owners] = pv.position[0]
        self.y[node, owners] = pv.position[1]
        self.t[node, owners] = pv.timestamp_us
        self.acc[node, owners] = pv.accuracy
        self.last_update[node, owners] = now
        if neighbour:
            self.mark_neighbour(owners, node, now)

    def update_if_newer(self, owner: int, node: NodeId, pv: PositionVector, now: int) -> None:
        if pv.timestamp_us > self.t[node, owner]:
            self.update(owner, node, pv, now)

    def mark_neighbour(self, owners, node: NodeId, now: int) -> None:
        self.neighbour[node, owners] = True
        self.has_neighbour[owners] = True
        self.last_update[node, owners] = now

    def position(self, owner: int, node: NodeId) -> Optional[tuple[float, float, bool]]:
        """``(x, y, accuracy)`` of ``node`` known to ``owner``, or ``None``."""
        if node is None or self.t[node, owner] < 0:
            return None
        return float(self.x[node, owner]), float(self.y[node, owner]), bool(self.acc[node, owner])

    def entry(self, owner: int, node: NodeId) -> Optional[LocationTableEntry]:
        last = int(self.last_update[node, owner])
        if last < 0:
            return None
        pos = self.position(owner, node)
        pv = None
        if pos is not None:
            pv = PositionVector(Position(pos[0], pos[1]), int(self.t[node, owner]), pos[2])
        return LocationTableEntry(node, pv, bool(self.neighbour[node, owner]), last)

    def neighbours(self, owner: int) -> np.ndarray:
        return np.flatnonzero(self.neighbour[:, owner])


class DuplicatePacketList:
    """Per-source FIFO record of seen sequence numbers with the ``new_added`` flag.

    Dicts keep insertion order, so the oldest sequence of a source is the
    first key; it is evicted when the source already holds ``capacity``
    entries.  An evicted sequence is indistinguishable from an unseen one.
    """

    def __init__(self, capacity: int = DPL_CAPACITY):
        self.capacity = capacity
        self._sources: dict[NodeId, dict[int, bool]] = {}

    def __contains__(self, pid: PacketId) -> bool:
        seqs = self._sources.get(pid.source)
        return seqs is not None and pid.sequence in seqs

    def add(self, pid: PacketId, new_added: bool) -> None:
        seqs = self._sources.setdefault(pid.source, {})
        if pid.sequence not in seqs and len(seqs) >= self.capacity:
            del seqs[next(iter(seqs))]
        seqs[pid.sequence] = new_added

    def new_added(self, pid: PacketId) -> Optional[bool]:
        seqs = self._sources.get(pid.source)
        if seqs is None:
            return None
        return seqs.get(pid.sequence)

    def clear_new_added(self, pid: PacketId) -> None:
        self.add(pid, False)

    def sequences(self, source: NodeId) -> list[int]:
        return list(self._sources.get(source, ()))


@dataclass(slots=True)
class CbfBufferEntry:
    packet: GbcPacket
    sender: Optional[NodeId]
    deadline: int
    inserted_at: int
    timer: Optional[Event]
    own: bool = False


class GpcGeometry(NamedTuple):
    d1: float  # ego to source
    d2: float  # sender to source
    d3: float  # ego to sender


def gpc_geometry(ego: Position, source: Position,
                 sender: Optional[Position]) -> GpcGeometry:
    """Distances for the cancellation test; ``sender=None`` means unknown or inaccurate."""
    d1 = distance(ego, source)
    if sender is None:
        return GpcGeometry(d1, 0.0, 0.0)
    return GpcGeometry(d1, distance(sender, source), distance(ego, sender))


def gpc_cancels(g: GpcGeometry) -> bool:
    """True when the duplicate came from a sender with more progress on our side."""
    return g.d1 < g.d2 and g.d2 > g.d3


class ForwardDecision(enum.Enum):
    TRANSMIT_NOW = "transmit"
    BUFFERED = "buffered"
    DISCARDED = "discarded"


class ReceiveOutcome(NamedTuple):
    delivered: bool
    decision: ForwardDecision


class Router:
    def __init__(self, host, node: NodeId, algorithm: Algorithm,
                 params: CbfParams = CbfParams(), border_suppression: Optional[bool] = None):
        self.host = host
        self.node = node
        self.algorithm = algorithm
        self.params = params
        if border_suppression is None:
            border_suppression = algorithm.border_suppression
        self.border_suppression = border_suppression
        self.dpl = DuplicatePacketList()
        self.buffer: dict[PacketId, CbfBufferEntry] = {}
        self.bc_buffer: deque[tuple[GbcPacket, Optional[NodeId]]] = deque(maxlen=BC_BUFFER_CAPACITY)
        self._t_max_us = ms_to_us(params.t_max_ms)

    # -- helpers ---------------------------------------------------------

    def _trace(self, event: str, pid: Optional[PacketId] = None, **detail) -> None:
        if self.host.tracing:
            self.host.trace(self.node, event, pid, detail)

    def _ego(self) -> Position:
        return self.host.ego_position(self.node)

    def _sender_position(self, sender: Optional[NodeId]) -> Optional[Position]:
        """Sender position from the location table if it exists and is accurate,
        and the ego position is accurate too."""
        if sender is None or not self.host.ego_accuracy(self.node):
            return None
        pos = self.host.loct.position(self.node, sender)
        if pos is None or not pos[2]:
            return None
        return Position(pos[0], pos[1])

    def _timer_us(self, dist: float) -> int:
        return ms_to_us(compute_cbf_timer(dist, self.params))

    def _contention_us(self, sender: Optional[NodeId]) -> tuple[int, Optional[float]]:
        spos = self._sender_position(sender)
        if spos is None:
            return self._t_max_us, None
        dist = distance(spos, self._ego())
        return self._timer_us(dist), dist

    def _gate_wait_us(self, now: int) -> int:
        return max(0, self.host.gatekeepers[self.node].gate_schedule_view() - now)

    def _arm(self, entry: CbfBufferEntry, deadline: int) -> None:
        q = self.host.queue
        q.cancel(entry.timer)
        entry.deadline = deadline
        entry.timer = q.schedule(deadline, EventKind.CBF_TIMER_EXPIRY,
                                 self.on_cbf_timer_expiry, entry.packet.id)

    def _buffer(self, p: GbcPacket, sender: Optional[NodeId], timeout_us: int,
                own: bool = False, **detail) -> None:
        if p.id in self.buffer:
            raise InvariantViolation("cbf-unique-entry", f"node {self.node} {p.id}")
        now = self.host.queue.now
        entry = CbfBufferEntry(p, sender, now, now, None, own)
        self.buffer[p.id] = entry
        self._arm(entry, now + max(timeout_us, 1))
        self._trace("buffer", p.id, deadline_us=entry.deadline, sender=sender, **detail)

    def _cancel(self, entry: CbfBufferEntry, sender: Optional[NodeId], **detail) -> None:
        del self.buffer[entry.packet.id]
        self.host.queue.cancel(entry.timer)
        entry.timer = None
        self._trace("cancel", entry.packet.id, sender=sender, **detail)

    # -- receive path ----------------------------------------------------

    def receive_gbc(self, p: GbcPacket, sender: Optional[NodeId]) -> ReceiveOutcome:
        host = self.host
        node = self.node
        pid = p.id
        inside = p.area.contains(self._ego()) >= 0
        if not inside and pid in self.dpl:
            self._trace("discard", pid, reason="dpl-outside", sender=sender)
            return ReceiveOutcome(False, ForwardDecision.DISCARDED)
        host.loct.update_if_newer(node, pid.source, p.source_pv, host.queue.now)
        delivered = False
        if inside:
            if not self.algorithm.dpd:
                delivered = True
            elif pid not in self.dpl:
                delivered = True
                self.dpl.add(pid, True)
            if delivered:
                host.deliver(node, p, sender)
        self.flush_packet_buffers()
        if p.rhl <= 1:
            self._trace("discard", pid, reason="rhl", sender=sender)
            return ReceiveOutcome(delivered, ForwardDecision.DISCARDED)
        p = replace(p, rhl=p.rhl - 1)
        if p.tc.scf and not host.loct.has_neighbour[node]:
            self.bc_buffer.append((p, sender))
            self.host.parked(node)
            self._trace("scf-store", pid, sender=sender)
            return ReceiveOutcome(delivered, ForwardDecision.BUFFERED)
        if inside:
            decision = self.forward(p, sender)
        else:
            decision = self.greedy_non_area_forward(p, sender)
        return ReceiveOutcome(delivered, decision)

    def flush_packet_buffers(self) -> None:
        """Re-run forwarding for packets parked while no neighbour was known."""
        if not self.bc_buffer or not self.host.loct.has_neighbour[self.node]:
            return
        parked = list(self.bc_buffer)
        self.bc_buffer.clear()
        ego = self._ego()
        for p, sender in parked:
            self._trace("scf-flush", p.id)
            if p.area.contains(ego) >= 0:
                self.forward(p, sender)
            else:
                self.greedy_non_area_forward(p, sender)

    # -- origination -----------------------------------------------------

    def originate(self, p: GbcPacket) -> ForwardDecision:
        """Source path for a packet generated by this node's facilities."""
        decision = self.forward(p, None, own=True)
        self.host.send(self.node, p, p.tc.priority)
        self._trace("originate", p.id)
        return decision

    def forward(self, p: GbcPacket, sender: Optional[NodeId], own: bool = False) -> ForwardDecision:
        algo = self.algorithm
        if algo is Algorithm.ETSI:
            return self.forward_etsi(p, sender, own)
        if algo is Algorithm.DPD:
            return self.forward_dpd(p, sender, own)
        if algo is Algorithm.GPC:
            return self.forward_gpc(p, sender, own)
        return self.forward_fot(p, sender, own)

    # -- area forwarding strategies --------------------------------------

    def forward_etsi(self, p: GbcPacket, sender: Optional[NodeId], own: bool = False) -> ForwardDecision:
        if own:
            return ForwardDecision.TRANSMIT_NOW
        entry = self.buffer.get(p.id)
        if entry is not None:
            self._cancel(entry, sender)
            return ForwardDecision.DISCARDED
        timeout, dist = self._contention_us(sender)
        self._buffer(p, sender, timeout, dist=dist)
        return ForwardDecision.BUFFERED

    def forward_dpd(self, p: GbcPacket, sender: Optional[NodeId], own: bool = False) -> ForwardDecision:
        pid = p.id
        if own:
            self.dpl.add(pid, False)
            return ForwardDecision.TRANSMIT_NOW
        entry = self.buffer.get(pid)
        if entry is not None:
            self._cancel(entry, sender)
            return ForwardDecision.DISCARDED
        if self.dpl.new_added(pid) is False:
            self._trace("discard", pid, reason="dpl", sender=sender)
            return ForwardDecision.DISCARDED
        self.dpl.clear_new_added(pid)
        timeout, dist = self._contention_us(sender)
        self._buffer(p, sender, timeout, dist=dist)
        return ForwardDecision.BUFFERED

    def forward_gpc(self, p: GbcPacket, sender: Optional[NodeId], own: bool = False) -> ForwardDecision:
        return self._forward_geo(p, sender, own, fot=False)

    def forward_fot(self, p: GbcPacket, sender: Optional[NodeId], own: bool = False) -> ForwardDecision:
        return self._forward_geo(p, sender, own, fot=True)

    def _forward_geo(self, p: GbcPacket, sender: Optional[NodeId], own: bool, fot: bool) -> ForwardDecision:
        pid = p.id
        now = self.host.queue.now
        if own:
            # Safeguard against a lost first hop: the source is the last-resort forwarder.
            self._buffer(p, None, self._t_max_us, own=True)
            self.dpl.add(pid, False)
            return ForwardDecision.TRANSMIT_NOW
        entry = self.buffer.get(pid)
        if entry is not None:
            ego = self._ego()
            spos = self._sender_position(sender)
            g = gpc_geometry(ego, p.source_pv.position, spos)
            if self.host.tracing:
                self._trace("gpc", pid, sender=sender, ego=list(ego),
                            sender_pos=None if spos is None else list(spos),
                            source_pos=list(p.source_pv.position),
                            d1=g.d1, d2=g.d2, d3=g.d3, cancel=gpc_cancels(g))
            if gpc_cancels(g):
                self._cancel(entry, sender, reason="gpc")
                return ForwardDecision.DISCARDED
            timeout = self._timer_us(g.d3)
            if fot:
                timeout = max(timeout, self._gate_wait_us(now))
            self._arm(entry, now + max(timeout, 1))
            self._trace("reschedule", pid, sender=sender, deadline_us=entry.deadline)
            return ForwardDecision.BUFFERED
        if self.dpl.new_added(pid) is False:
            self._trace("discard", pid, reason="dpl", sender=sender)
            return ForwardDecision.DISCARDED
        self.dpl.clear_new_added(pid)
        timeout, dist = self._contention_us(sender)
        if fot:
            timeout = max(timeout, self._gate_wait_us(now))
        self._buffer(p, sender, timeout, dist=dist)
        return ForwardDecision.BUFFERED

    # -- non-area forwarding ---------------------------------------------

    def greedy_non_area_forward(self, p: GbcPacket, sender: Optional[NodeId]) -> ForwardDecision:
        """Handling of a GeoBroadcast packet received outside its destination area."""
        pid = p.id
        if self.border_suppression and p.is_broadcast:
            self._trace("discard", pid, reason="border-broadcast", sender=sender)
            return ForwardDecision.DISCARDED
        self.dpl.add(pid, False)
        spos = self.host.loct.position(self.node, sender)
        if spos is not None and p.area.contains((spos[0], spos[1])) >= 0:
            self._trace("discard", pid, reason="sender-inside", sender=sender)
            return ForwardDecision.DISCARDED
        next_hop = self._greedy_next_hop(p)
        if next_hop is None:
            self._trace("discard", pid, reason="no-next-hop", sender=sender)
            return ForwardDecision.DISCARDED
        out = replace(p, ll_dest=next_hop, tc=DENM_FORWARD_TC)
        self.host.send(self.node, out, Priority.TC3)
        self._trace("greedy-forward", pid, sender=sender, next_hop=next_hop)
        self.host.greedy_forwarded(self.node, out)
        return ForwardDecision.TRANSMIT_NOW

    def _greedy_next_hop(self, p: GbcPacket) -> Optional[NodeId]:
        loct = self.host.loct
        owner = self.node
        cand = np.flatnonzero(loct.neighbour[:, owner] & (loct.t[:, owner] >= 0))
        if cand.size == 0:
            return None
        cx, cy = p.area.center
        d = np.hypot(loct.x[cand, owner] - cx, loct.y[cand, owner] - cy)
        best = int(np.argmin(d))
        ego = self._ego()
        if d[best] >= math.hypot(ego[0] - cx, ego[1] - cy):
            return None
        return int(cand[best])

    # -- timer -----------------------------------------------------------

    def on_cbf_timer_expiry(self, pid: PacketId) -> None:
        entry = self.buffer.get(pid)
        host = self.host
        now = host.queue.now
        if entry is None or entry.deadline != now:
            raise InvariantViolation("cbf-timer-entry", f"node {self.node} {pid} at {now}")
        if self.algorithm.fot:
            t_go = host.gatekeepers[self.node].gate_schedule_view()
            if now < t_go:
                self._arm(entry, t_go)
                self._trace("fot-hold", pid, t_go_us=t_go)
                return
        del self.buffer[pid]
        entry.timer = None
        p = entry.packet
        lifetime = p.lifetime_ms - (now - entry.inserted_at) / 1000.0
        if lifetime <= 0:
            self._trace("discard", pid, reason="lifetime")
            return
        if entry.own:
            out = replace(p, lifetime_ms=lifetime, ll_dest=None)
            priority = p.tc.priority
        else:
            out = replace(p, lifetime_ms=lifetime, ll_dest=None, tc=DENM_FORWARD_TC)
            priority = Priority.TC3
        self._trace("expire", pid, own=entry.own)
        host.send(self.node, out, priority)
