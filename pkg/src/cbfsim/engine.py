"""Stack composition and run orchestration.

:class:`Simulation` wires facilities, GeoNetworking routers, DCC gatekeepers
and the shared channel onto one event queue.  It is topology agnostic: the
highway scenario drives it through :func:`run`, the scripted topologies in
:mod:`cbfsim.golden` drive it directly.
"""

from __future__ import annotations

import dataclasses
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from cbfsim.core import (
    CAM_SIZE,
    CAM_TC,
    Algorithm,
    CamFrame,
    CbfParams,
    GbcPacket,
    PacketId,
    Position,
    PositionVector,
    Priority,
    US_PER_MS,
    ms_to_us,
    s_to_us,
)
from cbfsim.dcc import DccGatekeeper, DccParams
from cbfsim.events import EventKind, EventQueue, InvariantViolation
from cbfsim.geonet import LocationTables, Router
from cbfsim.metrics import MetricsLedger, RunResult
from cbfsim.phy import Channel, RadioParams, Transmission, airtime
from cbfsim.trace import TraceWriter, trace_filename
from cbfsim.scenario import (
    SOURCE,
    DenmSource,
    HighwayConfig,
    ScenarioSchedule,
    cam_interval_s,
    generate_vehicles,
)

CAM_TICK_US = 10_000


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named consumer of a run's randomness."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class StaticPositions:
    """Fixed node layout for scripted topologies."""

    def __init__(self, coords: Sequence[tuple[float, float]]):
        self.x = np.array([c[0] for c in coords], dtype=float)
        self.y = np.array([c[1] for c in coords], dtype=float)

    def position(self, node: int) -> Position:
        return Position(float(self.x[node]), float(self.y[node]))


class Simulation:
    def __init__(self, positions, algorithm: Algorithm, *, seed: int = 0,
                 cbf: CbfParams = CbfParams(), dcc: DccParams = DccParams(),
                 radio: RadioParams = RadioParams(), border_suppression: Optional[bool] = None,
                 ledger: Optional[MetricsLedger] = None,
                 trace_sink: Optional[Callable[[dict], None]] = None):
        self.positions = positions
        self.algorithm = algorithm
        self.n = n = len(positions.x)
        self.queue = EventQueue()
        self.ledger = ledger if ledger is not None else MetricsLedger()
        self.trace_sink = trace_sink
        self.tracing = trace_sink is not None
        self.dcc_params = dcc
        self.loct = LocationTables(n)
        self.gatekeepers = [DccGatekeeper(dcc) for _ in range(n)]
        self.routers = [Router(self, i, algorithm, cbf, border_suppression) for i in range(n)]
        self.channel = Channel(positions, radio, self.queue, substream(seed, "backoff"), self)
        self._gate_events: list = [None] * n
        self.cam_pending = np.zeros(n, dtype=bool)
        self.cam_last = np.zeros(n, dtype=np.int64)
        self.accuracy = np.ones(n, dtype=bool)
        self.min_release_gap: Optional[int] = None
        self.tc3_gaps: list[int] = []
        # Queue dwell of forwarded DENMs released from the TC3 queue.
        self.tc3_dwell: list[int] = []
        self.greedy_forwards: list[tuple[int, PacketId]] = []
        self.deliveries: list[tuple[int, int, PacketId]] = []
        self.denm_tx: list[tuple[int, int, PacketId]] = []
        self._cbr_prev: Optional[np.ndarray] = None
        self._scf_waiting: set[int] = set()

    # -- host interface used by routers ------------------------------------

    def ego_position(self, node: int) -> Position:
        return Position(float(self.positions.x[node]), float(self.positions.y[node]))

    def ego_accuracy(self, node: int) -> bool:
        return bool(self.accuracy[node])

    def trace(self, node: int, event: str, pid: Optional[PacketId], detail: dict) -> None:
        self.trace_sink({
            "time_us": self.queue.now,
            "node": node,
            "event": event,
            "packet_source": None if pid is None else pid.source,
            "packet_seq": None if pid is None else pid.sequence,
            "detail": detail,
        })

    def deliver(self, node: int, p: GbcPacket, sender: Optional[int]) -> None:
        now = self.queue.now
        first = self.ledger.record_delivery(p.id, node, now, self.ego_position(node))
        self.deliveries.append((now, node, p.id))
        if not first and self.algorithm.dpd and node != p.id.source:
            raise InvariantViolation("dpd-single-delivery", f"{p.id} node {node}")
        if self.tracing:
            self.trace(node, "deliver", p.id,
                       {"sender": sender, "first": first,
                        "latency_ms": (now - p.generated_at_us) / US_PER_MS})

    def parked(self, node: int) -> None:
        """``node`` holds packets waiting for its first neighbour."""
        self._scf_waiting.add(node)

    def greedy_forwarded(self, node: int, p: GbcPacket) -> None:
        self.greedy_forwards.append((node, p.id))

    def send(self, node: int, frame, priority: Priority) -> None:
        """Hand a frame to the node's DCC gatekeeper."""
        now = self.queue.now
        expires = None
        if isinstance(frame, GbcPacket):
            expires = now + ms_to_us(frame.lifetime_ms)
        gk = self.gatekeepers[node]
        dropped = gk.enqueue(frame, priority, now, expires)
        if expires is not None and self.tracing:
            self.trace(node, "dcc-enqueue", frame.id, {"tc": int(priority), "t_go_us": gk.t_go})
        if dropped is not None:
            self.ledger.dcc_drops += 1
            self._on_dropped(node, dropped)
        self._pump(node)

    def _on_dropped(self, node: int, item) -> None:
        frame = item.frame
        if isinstance(frame, CamFrame):
            self.cam_pending[node] = False
        elif self.tracing:
            self.trace(node, "dcc-drop", frame.id,
                       {"tc": int(item.priority), "dwell_us": self.queue.now - item.enqueued_at,
                        "t_go_us": self.gatekeepers[node].t_go})

    # -- DCC gate ------------------------------------------------------------

    def _pump(self, node: int) -> None:
        gk = self.gatekeepers[node]
        if gk.in_flight or not gk.pending():
            return
        now = self.queue.now
        if now < gk.t_go:
            ev = self._gate_events[node]
            if ev is None or not ev.pending or ev.fire_at != gk.t_go:
                self.queue.cancel(ev)
                self._gate_events[node] = self.queue.schedule(
                    gk.t_go, EventKind.DCC_GATE_OPEN, self._gate_open, node)
            return
        prev = gk.last_release
        item = gk.dequeue(now)
        if item is None:
            if gk.expired:
                self.ledger.dcc_expired = sum(g.expired for g in self.gatekeepers)
            return
        if prev is not None:
            gap = now - prev
            if self.min_release_gap is None or gap < self.min_release_gap:
                self.min_release_gap = gap
            if item.priority == Priority.TC3:
                self.tc3_gaps.append(gap)
        frame = item.frame
        if isinstance(frame, CamFrame):
            self.cam_pending[node] = False
        else:
            dwell = now - item.enqueued_at
            if item.priority == Priority.TC3:
                self.tc3_dwell.append(dwell)
            if self.tracing:
                self.trace(node, "dcc-dequeue", frame.id,
                           {"tc": int(item.priority), "dwell_us": dwell, "t_go_us": gk.t_go})
        self.channel.access(node, frame, now)

    def _gate_open(self, node: int) -> None:
        self._gate_events[node] = None
        self._pump(node)

    # -- channel listener -------------------------------------------------------

    def tx_started(self, tx: Transmission) -> None:
        frame = tx.frame
        if isinstance(frame, GbcPacket):
            now = self.queue.now
            self.denm_tx.append((now, tx.sender, frame.id))
            self.ledger.record_transmission(frame.id, tx.sender, now)
            if self.tracing:
                self.trace(tx.sender, "tx_start", frame.id,
                           {"rhl": frame.rhl, "unicast": frame.ll_dest,
                            "x": tx.origin[0], "y": tx.origin[1]})
        else:
            self.ledger.cam_tx += 1

    def tx_completed(self, tx: Transmission) -> None:
        node = tx.sender
        self.gatekeepers[node].on_transmission_complete(self.queue.now, tx.airtime)
        self._pump(node)

    def tx_ended(self, tx: Transmission, delivered: np.ndarray) -> None:
        frame = tx.frame
        if isinstance(frame, CamFrame):
            if delivered.size:
                self.loct.update(delivered, frame.sender, frame.pv, self.queue.now, neighbour=True)
                if self._scf_waiting:
                    self._flush_parked(delivered)
            return
        sender = tx.sender
        routers = self.routers
        dest = frame.ll_dest
        if delivered.size:
            # Any direct reception marks the sender as a neighbour.  The
            # GeoBroadcast header carries no sender position, so the stored
            # one (from CAMs) is kept.
            self.loct.mark_neighbour(delivered, sender, self.queue.now)
        for r in delivered.tolist():
            if dest is not None and r != dest:
                continue
            routers[r].receive_gbc(frame, sender)

    def _flush_parked(self, receivers: np.ndarray) -> None:
        for node in sorted(self._scf_waiting.intersection(receivers.tolist())):
            self._scf_waiting.discard(node)
            self.routers[node].flush_packet_buffers()

    # -- facilities ---------------------------------------------------------------

    def originate_denm(self, node: int, p: GbcPacket) -> None:
        now = self.queue.now
        pos = self.ego_position(node)
        x, y = self.positions.x, self.positions.y
        inside = np.flatnonzero(p.area.inside_many(x, y))
        inside = inside[inside != node]
        dist = np.hypot(x[inside] - pos[0], y[inside] - pos[1])
        self.ledger.record_generation(p.id, now, pos, dict(zip(inside.tolist(), dist.tolist())))
        if self.tracing:
            self.trace(node, "generate", p.id, {"population": int(inside.size)})
        self.routers[node].originate(p)

    def send_cam(self, node: int) -> None:
        now = self.queue.now
        pv = PositionVector(self.ego_position(node), now, bool(self.accuracy[node]))
        self.cam_pending[node] = True
        self.cam_last[node] = now
        self.send(node, CamFrame(node, pv, generated_at_us=now), CAM_TC.priority)

    # -- channel load measurement ------------------------------------------------

    def start_cbr(self, at: int = 0) -> None:
        self.channel.window_start = at
        self.queue.schedule(at + self.dcc_params.window_us, EventKind.CBR_WINDOW, self._cbr_window, 1)

    def _cbr_window(self, index: int) -> None:
        now = self.queue.now
        sample = self.channel.close_window(now)
        per = self.dcc_params.windows_per_update
        if self._cbr_prev is None:
            self._cbr_prev = sample
        else:
            self._cbr_prev = self._cbr_prev + sample
        if index % per == 0:
            avg = self._cbr_prev / per
            self._cbr_prev = None
            for gk, c in zip(self.gatekeepers, avg.tolist()):
                gk.update_rate(c)
        self.queue.schedule(now + self.dcc_params.window_us, EventKind.CBR_WINDOW,
                            self._cbr_window, index + 1)

    def run(self, until: int) -> None:
        self.queue.run(until)


# -- highway runs ----------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    highway: HighwayConfig = field(default_factory=HighwayConfig)
    schedule: ScenarioSchedule = field(default_factory=ScenarioSchedule)
    cbf: CbfParams = field(default_factory=CbfParams)
    dcc: DccParams = field(default_factory=DccParams)
    radio: RadioParams = field(default_factory=RadioParams)
    algorithms: tuple[str, ...] = ("etsi", "dpd", "gpc", "fot")
    densities: tuple[int, ...] = (10, 20, 30, 40, 50)


@dataclass(frozen=True)
class RunPlan:
    algorithm: Algorithm
    density: int
    seed: int
    config: SimConfig = field(default_factory=SimConfig)
    border_suppression: Optional[bool] = None


class HighwayRun:
    """One highway simulation: world, stack and the periodic drivers."""

    def __init__(self, plan: RunPlan, trace_sink=None):
        cfg = dataclasses.replace(plan.config.highway, density=plan.density)
        sched = plan.config.schedule
        self.plan = plan
        self.cfg = cfg
        self.schedule = sched
        self.world = generate_vehicles(cfg, substream(plan.seed, "placement"),
                                       substream(plan.seed, "speeds"))
        c = plan.config
        self.sim = Simulation(self.world, plan.algorithm, seed=plan.seed, cbf=c.cbf, dcc=c.dcc,
                              radio=c.radio, border_suppression=plan.border_suppression,
                              trace_sink=trace_sink)
        self.area = sched.area(cfg)
        self.source = DenmSource(SOURCE, sched, self.area)
        # Each node checks its CAM triggers every cam_check_s, at a random phase
        # on the CAM_TICK_US grid; first CAMs are spread over one max interval.
        cam_rng = substream(plan.seed, "cam")
        self._cam_check_us = s_to_us(sched.cam_check_s)
        phases = max(1, self._cam_check_us // CAM_TICK_US)
        phase = cam_rng.integers(0, phases, size=self.world.n)
        self._cam_groups = [np.flatnonzero(phase == k) for k in range(phases)]
        # Sub-tick offset so that generation instants are not aligned across nodes.
        self._cam_offset = cam_rng.integers(0, CAM_TICK_US, size=self.world.n)
        self.sim.cam_last[:] = -cam_rng.integers(0, s_to_us(sched.cam_max_interval_s), size=self.world.n)
        self._cam_airtime = airtime(CAM_SIZE, plan.config.radio)
        self.end_us = s_to_us(sched.end_s)
        self._step_us = s_to_us(sched.mobility_step_s)

    def _mobility(self) -> None:
        self.world.step(self._step_us / 1e6)
        nxt = self.sim.queue.now + self._step_us
        if nxt <= self.end_us:
            self.sim.queue.schedule(nxt, EventKind.MOBILITY_STEP, self._mobility)

    def _cam_tick(self, phase: int) -> None:
        """CAM generation check for the nodes whose 100 ms check falls on this tick."""
        sim = self.sim
        now = sim.queue.now
        nodes = self._cam_groups[phase]
        delta = np.fromiter((sim.gatekeepers[i].delta for i in nodes.tolist()), float, nodes.size)
        dcc_gap_s = np.clip(self._cam_airtime / delta, sim.dcc_params.gap_min_us,
                            sim.dcc_params.gap_max_us) / 1e6
        interval = cam_interval_s(self.world.speed[nodes], self.schedule, dcc_gap_s) * 1e6
        due = nodes[((now - sim.cam_last[nodes]) >= interval - 0.5) & ~sim.cam_pending[nodes]]
        offs = self._cam_offset
        for node in due.tolist():
            sim.queue.schedule(now + int(offs[node]), EventKind.CAM_TRIGGER, sim.send_cam, node)
        nxt = now + self._cam_check_us
        if nxt <= self.end_us:
            sim.queue.schedule(nxt, EventKind.CAM_TRIGGER, self._cam_tick, phase)

    def _denm(self) -> None:
        sim = self.sim
        p = self.source.make(sim.ego_position(SOURCE), sim.queue.now)
        sim.originate_denm(SOURCE, p)

    def execute(self) -> RunResult:
        q = self.sim.queue
        q.schedule(0, EventKind.MOBILITY_STEP, self._mobility)
        for k in range(len(self._cam_groups)):
            q.schedule(k * CAM_TICK_US, EventKind.CAM_TRIGGER, self._cam_tick, k)
        for t in self.schedule.denm_times_us():
            q.schedule(t, EventKind.DENM_TRIGGER, self._denm)
        self.sim.start_cbr(0)
        t0 = time.perf_counter()
        self.sim.run(self.end_us)
        res = RunResult.from_ledger(self.plan.algorithm.value, self.plan.density,
                                    self.plan.seed, self.sim.ledger)
        res.min_release_gap_us = self.sim.min_release_gap
        res.tc3_gaps_us = list(self.sim.tc3_gaps)
        res.tc3_dwell_us = list(self.sim.tc3_dwell)
        res.events = q.processed
        res.wall_s = time.perf_counter() - t0
        return res


def run(plan: RunPlan, trace_sink=None) -> RunResult:
    return HighwayRun(plan, trace_sink).execute()


def _run_safe(plan: RunPlan, trace_dir=None) -> RunResult:
    writer = None
    try:
        if trace_dir is not None:
            writer = TraceWriter.open(Path(trace_dir) / trace_filename(plan))
        return run(plan, writer)
    except Exception as exc:  # a failed run marks its cell
        return RunResult(plan.algorithm.value, plan.density, plan.seed,
                         error=f"{type(exc).__name__}: {exc}")
    finally:
        if writer is not None:
            writer.close()


def plan_matrix(config: SimConfig, algorithms=None, densities=None, seeds=None,
                border_suppression: Optional[bool] = None) -> list[RunPlan]:
    algorithms = algorithms or config.algorithms
    densities = densities or config.densities
    seeds = seeds or config.schedule.seeds
    return [RunPlan(Algorithm.parse(str(a)), int(d), int(s), config, border_suppression)
            for a in algorithms for d in densities for s in seeds]


def sweep(plans: Sequence[RunPlan], workers: int = 1,
          progress: Optional[Callable[[RunResult], None]] = None,
          trace_dir=None) -> list[RunResult]:
    """Run every plan, in parallel processes when ``workers > 1``; order is preserved."""
    job = partial(_run_safe, trace_dir=trace_dir)
    out = []
    if workers <= 1:
        results = map(job, plans)
        for r in results:
            if progress:
                progress(r)
            out.append(r)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for r in pool.map(job, plans):
            if progress:
                progress(r)
            out.append(r)
    return out
