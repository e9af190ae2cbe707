import dataclasses

import numpy as np

from cbfsim.core import Algorithm, Priority
from cbfsim.engine import HighwayRun, RunPlan, plan_matrix, run, substream, sweep
from cbfsim.metrics import ResultTable
from cbfsim.scenario import HighwayConfig
from cbfsim.trace import TraceBuffer

from conftest import make_sim, packet, small_config

SMALL = small_config()


def test_substreams_independent_and_stable():
    a = substream(1, "backoff").integers(1 << 30, size=4)
    assert np.array_equal(a, substream(1, "backoff").integers(1 << 30, size=4))
    assert not np.array_equal(a, substream(1, "cam").integers(1 << 30, size=4))
    assert not np.array_equal(a, substream(2, "backoff").integers(1 << 30, size=4))


def test_same_plan_twice_identical():
    plan = RunPlan(Algorithm.GPC, 10, 1, SMALL)
    a, b = run(plan), run(plan)
    assert a.transmissions == b.transmissions > 0
    assert a.latency_rows == b.latency_rows and a.bins == b.bins
    assert a.events == b.events


def test_no_denms_means_cam_only():
    r = run(RunPlan(Algorithm.ETSI, 10, 1, small_config(denm_count=0)))
    assert r.transmissions == 0 and r.cam_tx > 0 and r.pdr_per_message == []


def test_small_run_reaches_area():
    r = run(RunPlan(Algorithm.FOT, 10, 1, SMALL))
    assert len(r.pdr_per_message) == 3
    assert r.mean_pdr > 0.9
    assert r.min_release_gap_us >= 25_000


def test_traced_run_is_event_ordered():
    buf = TraceBuffer()
    HighwayRun(RunPlan(Algorithm.GPC, 10, 2, SMALL), buf).execute()
    times = [r["time_us"] for r in buf]
    assert times == sorted(times)
    assert sum(r["event"] == "generate" for r in buf) == 3


def test_plan_matrix_size():
    conf = SMALL
    assert len(plan_matrix(conf, seeds=[1, 2, 3, 4, 5])) == 4 * 5 * 5


def test_single_cell_sweep_matches_run():
    plan = RunPlan(Algorithm.DPD, 10, 2, SMALL)
    (swept,) = sweep([plan])
    lone = run(plan)
    assert (swept.transmissions, swept.latency_rows) == (lone.transmissions, lone.latency_rows)


def test_parallel_sweep_matches_serial():
    plans = plan_matrix(SMALL, ["gpc", "fot"], [10], [1, 2])
    serial = sweep(plans)
    par = sweep(plans, workers=2)
    assert [(r.algorithm, r.seed, r.transmissions) for r in serial] == \
           [(r.algorithm, r.seed, r.transmissions) for r in par]


def test_failed_run_marks_cell():
    plan = RunPlan(Algorithm.GPC, 10, 1, SMALL)
    # a road too short to hold two vehicles fails inside the worker
    broken = dataclasses.replace(SMALL, highway=HighwayConfig(length_m=10.0, lanes_per_direction=1,
                                                              lane_speeds_ms=(25.0,), source_x_m=0.0))
    (r,) = sweep([dataclasses.replace(plan, config=broken)])
    assert r.error is not None and "ValueError" in r.error
    table = ResultTable([r, run(plan)])
    assert table[("gpc", 10)].failed == 1 and table[("gpc", 10)].runs == 2


def test_cam_has_priority_over_forwarded_denm():
    sim = make_sim([(0.0, 0.0), (300.0, 0.0)], Algorithm.DPD)
    gk = sim.gatekeepers[1]
    gk.t_go = 50_000
    sim.send(1, packet(), Priority.TC3)
    sim.send_cam(1)
    sim.run(60_000)
    assert sim.ledger.cam_tx == 1 and not sim.denm_tx


def test_gbc_reception_marks_neighbour():
    sim = make_sim([(0.0, 0.0), (300.0, 0.0)], Algorithm.DPD, prefill=False)
    sim.originate_denm(0, packet())
    sim.run(10_000)
    assert sim.loct.neighbour[0, 1] and sim.loct.position(1, 0) is not None


def test_dcc_trace_records():
    sim = make_sim([(0.0, 0.0), (300.0, 0.0)], Algorithm.DPD, trace=True)
    sim.originate_denm(0, packet())
    sim.run(300_000)
    deq = [r for r in sim.trace_buffer if r["event"] == "dcc-dequeue"]
    assert {r["detail"]["tc"] for r in deq} == {0, 3}
    assert all(r["detail"]["dwell_us"] >= 0 for r in deq)
    assert sim.tc3_dwell == [r["detail"]["dwell_us"] for r in deq if r["detail"]["tc"] == 3]
