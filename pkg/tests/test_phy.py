import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbfsim.core import CAM_SIZE, DENM_SIZE
from cbfsim.engine import StaticPositions
from cbfsim.events import EventKind, EventQueue
from cbfsim.phy import Channel, RadioParams, airtime, rx_power_mw

P = RadioParams()


class Frame:
    def __init__(self, name, size=DENM_SIZE):
        self.name = name
        self.size = size


class Recorder:
    def __init__(self):
        self.started = []
        self.ended = []

    def tx_started(self, tx):
        self.started.append(tx)

    def tx_completed(self, tx):
        pass

    def tx_ended(self, tx, delivered):
        self.ended.append((tx, set(delivered.tolist())))


class FixedDraws:
    """Backoff source returning scripted values."""

    def __init__(self, values):
        self.values = list(values)

    def integers(self, high, size=None):
        if size is None:
            return self.values.pop(0)
        return np.array([self.values.pop(0) for _ in range(size)])


def make_channel(coords, rng=None, params=P):
    q = EventQueue()
    rec = Recorder()
    ch = Channel(StaticPositions(coords), params, q, rng or np.random.default_rng(0), rec)
    return ch, q, rec


def test_airtime_examples():
    assert airtime(DENM_SIZE) == 442
    assert airtime(CAM_SIZE) == 420
    # 300 bytes is a whole number of microseconds at 6 Mb/s, so doubling is exact
    assert airtime(600) - P.preamble_us == 2 * (airtime(300) - P.preamble_us) == 800
    with pytest.raises(ValueError):
        airtime(0)


def test_sensitivity_calibrated_to_max_range():
    assert rx_power_mw(778.0, P) == pytest.approx(P.sensitivity_mw)
    assert rx_power_mw(700.0, P) > P.sensitivity_mw > rx_power_mw(800.0, P)


@pytest.mark.parametrize("d, ok", [(700.0, True), (778.0, True), (800.0, False)])
def test_single_transmitter_range(d, ok):
    ch, q, rec = make_channel([(0.0, 0.0), (d, 0.0)])
    ch.access(0, Frame("a"), 0)
    q.run(10_000)
    (tx, got), = rec.ended
    assert (1 in got) is ok


def test_idle_channel_starts_after_aifs():
    ch, q, rec = make_channel([(0.0, 0.0), (100.0, 0.0)])
    ch.access(0, Frame("a"), 1_000)
    q.run(10_000)
    assert rec.started[0].start == 1_058


def test_overlap_kills_common_receivers_only():
    # 0 and 2 transmit together; 1 hears both, 3 hears only 0.
    coords = [(0.0, 0.0), (500.0, 0.0), (1000.0, 0.0), (-700.0, 0.0)]
    ch, q, rec = make_channel(coords)
    ch.access(0, Frame("a"), 0)
    ch.access(2, Frame("b"), 0)
    q.run(10_000)
    got = {tx.sender: d for tx, d in rec.ended}
    assert 1 not in got[0] and 1 not in got[2]
    assert 3 in got[0]


def _busy_then_release(draws):
    # 2 holds the medium; 0 and 1 are released during its frame.
    coords = [(0.0, 0.0), (50.0, 0.0), (100.0, 0.0), (300.0, 0.0)]
    ch, q, rec = make_channel(coords, rng=FixedDraws(draws))
    ch.access(2, Frame("busy"), 0)
    q.run(100)
    ch.access(0, Frame("a"), 100)
    ch.access(1, Frame("b"), 100)
    q.run(100_000)
    return rec


def test_different_backoff_defers_without_collision():
    rec = _busy_then_release([2, 5])
    end = 58 + 442
    starts = {tx.sender: tx.start for tx in rec.started}
    assert starts[0] == end + 58 + 2 * 13
    assert starts[1] > starts[0] + 442
    got = {tx.sender: d for tx, d in rec.ended}
    assert 3 in got[0] and 3 in got[1]


def test_identical_backoff_collides():
    rec = _busy_then_release([4, 4])
    starts = {tx.sender: tx.start for tx in rec.started}
    assert starts[0] == starts[1]
    got = {tx.sender: d for tx, d in rec.ended}
    assert 3 not in got[0] and 3 not in got[1]


def test_cbr_silent_is_zero():
    ch, q, rec = make_channel([(0.0, 0.0), (10.0, 0.0)])
    q.run(100_000)
    assert ch.close_window(100_000).tolist() == [0.0, 0.0]


def test_cbr_saturating_transmitter():
    ch, q, rec = make_channel([(0.0, 0.0), (10.0, 0.0)])
    period = 1_000
    for k in range(100):
        q.schedule(k * period, EventKind.SCRIPT, ch.access, 0, Frame(k), k * period)
    q.run(100 * period)
    cbr = ch.close_window(100 * period)
    assert cbr[1] == pytest.approx(442 / period, rel=1e-6)


def test_second_frame_at_mac_rejected():
    ch, q, rec = make_channel([(0.0, 0.0)])
    ch.access(0, Frame("a"), 0)
    with pytest.raises(RuntimeError):
        ch.access(0, Frame("b"), 0)


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(-1500, 1500), st.floats(-20, 20)), min_size=2, max_size=12),
       st.lists(st.integers(0, 3_000), min_size=1, max_size=12), st.integers(0, 2**32 - 1))
def test_reception_matches_overlap_oracle(coords, releases, seed):
    ch, q, rec = make_channel(coords, rng=np.random.default_rng(seed))
    n = len(coords)
    for k, t in enumerate(releases):
        node = k % n
        q.schedule(t + k, EventKind.SCRIPT,
                   lambda node=node, k=k: None if ch.mac_busy(node) else ch.access(node, Frame(k), q.now))
    q.run(1_000_000)
    txs = [tx for tx, _ in rec.ended]
    assert len(txs) == len(rec.started)
    xy = np.asarray(coords)
    r, cs = P.max_range_m, P.carrier_sense_range_m
    for tx, got in rec.ended:
        d = np.hypot(*(xy - tx.origin).T)
        expected = set()
        for j in range(n):
            if j == tx.sender or d[j] > r:
                continue
            hit = False
            for other in txs:
                if other is tx or other.start >= tx.end or tx.start >= other.end:
                    continue
                if np.hypot(*(xy[j] - other.origin)) <= cs:
                    hit = True
            if not hit:
                expected.add(j)
        assert got == expected
        assert got <= set(np.flatnonzero(tx.in_range).tolist())
