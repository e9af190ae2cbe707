import pytest

from cbfsim.core import Algorithm
from cbfsim.golden import (
    CHECKS,
    border_storm,
    duplicate_wave,
    outside_forwards,
    pair_abort,
    run_golden,
    source_retransmission,
)
from cbfsim.trace import TraceBuffer


@pytest.mark.parametrize("name", list(CHECKS))
def test_check_passes(name):
    (c,) = run_golden([name])
    assert c.passed, c.lines


def test_duplicate_wave_details():
    etsi = duplicate_wave(Algorithm.ETSI)
    tx = etsi.tx_per_node()
    # C never hears B's short-range copy and starts a second wave; the source re-forwards too
    assert tx[etsi.names["C"]] >= 2 and tx[etsi.names["A"]] >= 2
    assert etsi.sim.ledger.messages[etsi.pid].redeliveries > 0
    dpd = duplicate_wave(Algorithm.DPD)
    assert set(dpd.tx_per_node().values()) == {1}
    assert dpd.sim.ledger.messages[dpd.pid].redeliveries == 0


def test_pair_abort_details():
    dpd = pair_abort(Algorithm.DPD)
    assert not dpd.delivered("F1") and not dpd.delivered("F2")
    assert dpd.delivered("D1") and dpd.delivered("D2")
    gpc = pair_abort(Algorithm.GPC)
    assert gpc.delivered("F1") and gpc.delivered("F2")


def test_border_storm_details():
    off = border_storm(Algorithm.DPD, suppression=False)
    assert off.sim.greedy_forwards and outside_forwards(off) >= 1
    on = border_storm(Algorithm.DPD, suppression=True)
    assert not on.sim.greedy_forwards and outside_forwards(on) == 0
    # inside nodes are served either way
    assert on.delivered("I") and on.delivered("F")


def test_source_retransmission_details():
    dpd = source_retransmission(Algorithm.DPD)
    assert dpd.tx_times("S") and len(dpd.tx_times("S")) == 1
    assert not dpd.sim.ledger.messages[dpd.pid].receptions
    gpc = source_retransmission(Algorithm.GPC)
    first, second = gpc.tx_times("S")[:2]
    assert 0 < second - first <= 100_000


@pytest.mark.parametrize("scenario", [
    lambda sink: duplicate_wave(Algorithm.ETSI, sink),
    lambda sink: pair_abort(Algorithm.GPC, sink),
    lambda sink: border_storm(Algorithm.DPD, False, sink),
    lambda sink: source_retransmission(Algorithm.FOT, sink),
])
def test_scenarios_are_deterministic(scenario):
    a, b = TraceBuffer(), TraceBuffer()
    scenario(a)
    scenario(b)
    assert a == b and a
