import os

import pytest
from hypothesis import settings

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
from cbfsim.golden import prefill_neighbours
from cbfsim.trace import TraceBuffer

settings.register_profile("ci", deadline=None, max_examples=100)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

WIDE_AREA = DestinationArea(Position(1000.0, 0.0), 3000.0, 50.0)


def make_sim(coords, algorithm=Algorithm.DPD, prefill=True, trace=False, **kw):
    sink = TraceBuffer() if trace else None
    if isinstance(algorithm, str):
        algorithm = Algorithm.parse(algorithm)
    sim = Simulation(StaticPositions(coords), algorithm, trace_sink=sink, **kw)
    if prefill:
        prefill_neighbours(sim)
    sim.trace_buffer = sink
    return sim


def packet(source=0, seq=0, src_pos=(0.0, 0.0), area=WIDE_AREA, rhl=10, tc=DENM_SOURCE_TC,
           lifetime_ms=10_000.0, generated_at=0):
    return GbcPacket(PacketId(source, seq), PositionVector(Position(*src_pos), generated_at), area,
                     rhl, lifetime_ms, tc, generated_at_us=generated_at)


def register(sim, p):
    """Record the message in the ledger as if the source had generated it."""
    sim.ledger.record_generation(p.id, 0, p.source_pv.position, {})


@pytest.fixture
def sim_factory():
    return make_sim


def small_config(**schedule):
    """A 1.5 km highway with a short DENM schedule; runs in about a second."""
    from cbfsim.engine import SimConfig
    from cbfsim.scenario import HighwayConfig, ScenarioSchedule

    sched = dict(warmup_s=2.0, denm_count=3, measure_window_s=4.0, area_behind_m=1000.0, seeds=(1, 2))
    sched.update(schedule)
    return SimConfig(HighwayConfig(length_m=1500.0, source_x_m=200.0), ScenarioSchedule(**sched))


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, passed: bool, detail: str) -> None:
    """Record one acceptance verdict; printed in the terminal summary."""
    line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
