from cbfsim.core import Algorithm
from cbfsim.engine import RunPlan
from cbfsim.trace import FIELDS, TraceBuffer, TraceWriter, read_trace, trace_filename

from conftest import make_sim, packet


def test_roundtrip(tmp_path):
    path = tmp_path / "t.jsonl"
    w = TraceWriter.open(path)
    recs = [{"time_us": 1, "node": 0, "event": "x", "packet_source": None, "packet_seq": None,
             "detail": {"a": [1, 2]}}]
    for r in recs:
        w(r)
    w.close()
    assert list(read_trace(path)) == recs and w.records == 1


def test_filename():
    assert trace_filename(RunPlan(Algorithm.FOT, 30, 4)) == "trace_fot_d30_s4.jsonl"


def test_records_have_fixed_fields():
    sim = make_sim([(0.0, 0.0), (300.0, 0.0), (600.0, 0.0)], Algorithm.GPC, trace=True)
    sim.originate_denm(0, packet())
    sim.run(500_000)
    events = {r["event"] for r in sim.trace_buffer}
    assert {"generate", "originate", "buffer", "deliver", "tx_start", "dcc-enqueue", "dcc-dequeue"} <= events
    for r in sim.trace_buffer:
        assert tuple(r) == FIELDS


def test_gpc_records_carry_geometry():
    sim = make_sim([(0.0, 0.0), (300.0, 0.0), (600.0, 0.0)], Algorithm.GPC, trace=True)
    sim.originate_denm(0, packet())
    sim.run(500_000)
    gpc = [r for r in sim.trace_buffer if r["event"] == "gpc"]
    assert gpc
    for r in gpc:
        assert {"ego", "sender_pos", "source_pos", "d1", "d2", "d3", "cancel"} <= set(r["detail"])


def test_buffer_sink_is_list():
    b = TraceBuffer()
    b({"a": 1})
    assert b == [{"a": 1}]
