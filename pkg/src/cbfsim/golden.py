"""Scripted static topologies reproducing the forwarding pathologies.

Every scenario is deterministic: nodes never move, there are no CAMs unless
the script injects one, and location tables are pre-filled with the true
positions of radio neighbours (or deliberately stale ones where the scenario
needs them).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cbfsim.core import (
    DENM_SOURCE_TC,
    Algorithm,
    DestinationArea,
    GbcPacket,
    PacketId,
    Position,
    PositionVector,
)
from cbfsim.engine import Simulation, StaticPositions
from cbfsim.events import EventKind

HORIZON_US = 2_000_000


def _area(x0: float, x1: float, half_width: float = 20.0) -> DestinationArea:
    return DestinationArea(Position((x0 + x1) / 2, 0.0), (x1 - x0) / 2, half_width)


def _packet(sim: Simulation, source: int, area: DestinationArea, seq: int = 0,
            hop_limit: int = 10) -> GbcPacket:
    return GbcPacket(PacketId(source, seq), PositionVector(sim.ego_position(source), 0), area,
                     hop_limit, 10_000.0, DENM_SOURCE_TC, generated_at_us=0)


def prefill_neighbours(sim: Simulation, stale: Optional[dict[tuple[int, int], tuple[float, float]]] = None) -> None:
    """Fill every node's location table with its radio neighbours.

    ``stale`` maps (owner, node) to the position the owner believes in.
    """
    pos = sim.positions
    r = sim.channel.params.max_range_m
    for node in range(sim.n):
        d = np.hypot(pos.x - pos.x[node], pos.y - pos.y[node])
        owners = np.flatnonzero((d <= r) & (np.arange(sim.n) != node))
        if owners.size:
            sim.loct.update(owners, node, PositionVector(sim.ego_position(node), 0), 0, neighbour=True)
    for (owner, node), xy in (stale or {}).items():
        sim.loct.update(owner, node, PositionVector(Position(*xy), 0), 0, neighbour=True)


def _build(coords, algorithm: Algorithm, border_suppression=None, trace_sink=None) -> Simulation:
    return Simulation(StaticPositions(coords), algorithm, seed=0,
                      border_suppression=border_suppression, trace_sink=trace_sink)


@dataclass
class GoldenResult:
    sim: Simulation
    pid: PacketId
    names: dict[str, int]

    def tx_per_node(self) -> Counter:
        return Counter(n for _, n, p in self.sim.denm_tx if p == self.pid)

    def deliveries_per_node(self) -> Counter:
        return Counter(n for _, n, p in self.sim.deliveries if p == self.pid)

    def delivered(self, name: str) -> bool:
        return self.names[name] in self.sim.ledger.messages[self.pid].receptions

    def tx_times(self, name: str) -> list[int]:
        node = self.names[name]
        return [t for t, n, p in self.sim.denm_tx if n == node and p == self.pid]


@dataclass
class GoldenCheck:
    name: str
    passed: bool
    lines: list[str] = field(default_factory=list)


# -- duplicate wave ------------------------------------------------------------

WAVE_LAYOUT = {"A": (0.0, 0.0), "C": (100.0, 0.0), "D": (300.0, 0.0), "E": (500.0, 0.0),
        "B": (770.0, 0.0), "F": (1200.0, 0.0)}


def duplicate_wave(algorithm: Algorithm, trace_sink=None) -> GoldenResult:
    """A sends; B is the best forwarder but its transmission only covers 600 m,
    so C (close to A) never hears it and later forwards a second wave."""
    names = {k: i for i, k in enumerate(WAVE_LAYOUT)}
    sim = _build(list(WAVE_LAYOUT.values()), algorithm, trace_sink=trace_sink)
    sim.channel.range_override[names["B"]] = 600.0
    prefill_neighbours(sim)
    p = _packet(sim, names["A"], _area(-100.0, 1400.0))
    sim.queue.schedule(0, EventKind.SCRIPT, sim.originate_denm, names["A"], p)
    sim.run(HORIZON_US)
    return GoldenResult(sim, p.id, names)


def check_duplicate_wave() -> GoldenCheck:
    etsi = duplicate_wave(Algorithm.ETSI)
    dpd = duplicate_wave(Algorithm.DPD)
    etsi_tx = etsi.tx_per_node()
    etsi_rx = etsi.deliveries_per_node()
    dpd_tx = dpd.tx_per_node()
    dpd_rx = dpd.deliveries_per_node()
    receivers = [n for k, n in dpd.names.items() if k != "A"]
    ok_etsi = max(etsi_tx.values()) >= 2 and any(v >= 2 for k, v in etsi_rx.items() if k != etsi.names["A"])
    ok_dpd = max(dpd_tx.values()) == 1 and all(dpd_rx[n] == 1 for n in receivers)
    return GoldenCheck("duplicate wave", ok_etsi and ok_dpd, [
        f"etsi: transmissions={sum(etsi_tx.values())} max per node={max(etsi_tx.values())} "
        f"redeliveries={etsi.sim.ledger.messages[etsi.pid].redeliveries}",
        f"dpd: transmissions={sum(dpd_tx.values())} max per node={max(dpd_tx.values())} "
        f"deliveries per receiver={sorted(dpd_rx[n] for n in receivers)}",
    ])


# -- pair abort ------------------------------------------------------------------

PAIR_LAYOUT = {"S": (0.0, 0.0), "P1": (700.0, 0.0), "P2": (697.0, 3.5),
        "D1": (1100.0, 0.0), "D2": (1400.0, 0.0), "F1": (1900.0, 0.0), "F2": (2400.0, 0.0)}
# Nodes outside the radio coverage of both P1 and P2.
PAIR_BEYOND = ("F1", "F2")


def pair_abort(algorithm: Algorithm, trace_sink=None) -> GoldenResult:
    """P1 and P2 are almost equidistant from S; P2's copy is already at the MAC
    when P1 transmits, so both go out back to back."""
    names = {k: i for i, k in enumerate(PAIR_LAYOUT)}
    sim = _build(list(PAIR_LAYOUT.values()), algorithm, trace_sink=trace_sink)
    prefill_neighbours(sim)
    p = _packet(sim, names["S"], _area(-100.0, 2500.0))
    sim.queue.schedule(0, EventKind.SCRIPT, sim.originate_denm, names["S"], p)
    sim.run(HORIZON_US)
    return GoldenResult(sim, p.id, names)


def check_pair_abort() -> GoldenCheck:
    dpd = pair_abort(Algorithm.DPD)
    gpc = pair_abort(Algorithm.GPC)
    beyond_dpd = [k for k in PAIR_BEYOND if dpd.delivered(k)]
    ok = (not beyond_dpd and len(dpd.tx_times("P1")) == 1 and len(dpd.tx_times("P2")) == 1
          and gpc.delivered("F2"))
    return GoldenCheck("pair abort", ok, [
        f"dpd: pair transmissions P1={len(dpd.tx_times('P1'))} P2={len(dpd.tx_times('P2'))} "
        f"deliveries beyond the pair={beyond_dpd}",
        f"gpc: farthest node delivered={gpc.delivered('F2')}",
    ])


# -- border storm ------------------------------------------------------------------

BORDER = {"S": (300.0, 0.0), "I": (600.0, 0.0), "F": (990.0, 0.0),
          "O1": (1100.0, 0.0), "O2": (1300.0, 0.0)}
BORDER_AREA = (0.0, 1000.0)
# Outside nodes last heard F before it entered the area.
BORDER_STALE_X = 1010.0


def border_storm(algorithm: Algorithm, suppression: bool, trace_sink=None) -> GoldenResult:
    names = {k: i for i, k in enumerate(BORDER)}
    sim = _build(list(BORDER.values()), algorithm, border_suppression=suppression,
                 trace_sink=trace_sink)
    stale = {(names[o], names["F"]): (BORDER_STALE_X, 0.0) for o in ("O1", "O2")}
    prefill_neighbours(sim, stale)
    p = _packet(sim, names["S"], _area(*BORDER_AREA))
    sim.queue.schedule(0, EventKind.SCRIPT, sim.originate_denm, names["S"], p)
    sim.run(HORIZON_US)
    return GoldenResult(sim, p.id, names)


def outside_forwards(res: GoldenResult) -> int:
    outside = {res.names[k] for k in ("O1", "O2")}
    return sum(1 for _, n, p in res.sim.denm_tx if p == res.pid and n in outside)


def check_border_storm() -> GoldenCheck:
    off = border_storm(Algorithm.DPD, suppression=False)
    on = border_storm(Algorithm.DPD, suppression=True)
    reinj = len(off.sim.greedy_forwards)
    ok = reinj >= 1 and outside_forwards(on) == 0
    return GoldenCheck("border storm", ok, [
        f"suppression off: greedy re-injections={reinj} outside transmissions={outside_forwards(off)}",
        f"suppression on: outside transmissions={outside_forwards(on)}",
    ])


# -- lost first hop ------------------------------------------------------------------

RETX = {"S": (0.0, 0.0), "R1": (300.0, 0.0), "R2": (600.0, 0.0), "J": (1400.0, 0.0)}


def source_retransmission(algorithm: Algorithm, trace_sink=None) -> GoldenResult:
    """J is hidden from S and sends a CAM at the same instant, destroying S's first
    transmission at R1 and R2."""
    names = {k: i for i, k in enumerate(RETX)}
    sim = _build(list(RETX.values()), algorithm, trace_sink=trace_sink)
    prefill_neighbours(sim)
    p = _packet(sim, names["S"], _area(-100.0, 800.0))
    sim.queue.schedule(0, EventKind.SCRIPT, sim.originate_denm, names["S"], p)
    sim.queue.schedule(0, EventKind.SCRIPT, sim.send_cam, names["J"])
    sim.run(HORIZON_US)
    return GoldenResult(sim, p.id, names)


def check_source_retransmission() -> GoldenCheck:
    dpd = source_retransmission(Algorithm.DPD)
    gpc = source_retransmission(Algorithm.GPC)
    dpd_rx = len(dpd.sim.ledger.messages[dpd.pid].receptions)
    s_tx = gpc.tx_times("S")
    retx_ok = len(s_tx) >= 2 and s_tx[1] - s_tx[0] <= 100_000
    gpc_rx = len(gpc.sim.ledger.messages[gpc.pid].receptions)
    ok = dpd_rx == 0 and retx_ok and gpc.delivered("R1") and gpc.delivered("R2")
    delay = (s_tx[1] - s_tx[0]) / 1000 if len(s_tx) >= 2 else None
    return GoldenCheck("source retransmission", ok, [
        f"dpd: receivers={dpd_rx}",
        f"gpc: source transmissions={len(s_tx)} retransmission after {delay} ms receivers={gpc_rx}",
    ])


CHECKS = {
    "duplicate-wave": check_duplicate_wave,
    "pair-abort": check_pair_abort,
    "border-storm": check_border_storm,
    "source-retransmission": check_source_retransmission,
}


def run_golden(names=None) -> list[GoldenCheck]:
    return [CHECKS[n]() for n in (names or CHECKS)]
