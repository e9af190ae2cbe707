"""Per-run ledger of DENM transmissions, deliveries and latencies, plus aggregation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from cbfsim.core import NodeId, PacketId, Position, distance
from cbfsim.events import InvariantViolation

BIN_WIDTH_M = 250.0


@dataclass
class MessageRecord:
    pid: PacketId
    generated_at: int
    source_pos: Position
    # Nodes inside the area at generation (source excluded) and their distance to the source.
    eligible: dict[NodeId, float]
    tx_count: int = 0
    # node -> (first delivery time, distance from source at delivery)
    receptions: dict[NodeId, tuple[int, float]] = field(default_factory=dict)
    redeliveries: int = 0

    @property
    def population(self) -> int:
        return len(self.eligible)

    @property
    def pdr(self) -> float:
        if not self.eligible:
            return math.nan
        return len(self.receptions) / len(self.eligible)


class MetricsLedger:
    def __init__(self):
        self.messages: dict[PacketId, MessageRecord] = {}
        self.dcc_drops = 0
        self.dcc_expired = 0
        self.cam_tx = 0

    def record_generation(self, pid: PacketId, now: int, source_pos: Position,
                          eligible: dict[NodeId, float]) -> None:
        if pid in self.messages:
            raise InvariantViolation("packet-id-unique", str(pid))
        self.messages[pid] = MessageRecord(pid, now, source_pos, dict(eligible))

    def record_transmission(self, pid: PacketId, node: NodeId, now: int) -> None:
        self.messages[pid].tx_count += 1

    def record_delivery(self, pid: PacketId, node: NodeId, now: int, pos: Position) -> bool:
        """Count a facilities delivery; returns True on first delivery to ``node``."""
        msg = self.messages[pid]
        if node == pid.source:
            return False
        if node in msg.receptions:
            msg.redeliveries += 1
            return False
        msg.receptions[node] = (now, distance(pos, msg.source_pos))
        return True

    def add_first_delivery(self, pid: PacketId, node: NodeId, now: int, dist: float) -> None:
        """Strict variant used when replaying: a second first-delivery is a violation."""
        msg = self.messages[pid]
        if node in msg.receptions:
            raise InvariantViolation("first-delivery-unique", f"{pid} node {node}")
        msg.receptions[node] = (now, dist)

    # -- derived metrics --------------------------------------------------

    @property
    def total_transmissions(self) -> int:
        return sum(m.tx_count for m in self.messages.values())

    def pdr_values(self) -> list[float]:
        return [m.pdr for m in self.messages.values() if m.population]

    def mean_pdr(self) -> float:
        vals = self.pdr_values()
        return float(np.mean(vals)) if vals else math.nan

    def latency_samples(self) -> list[tuple[PacketId, NodeId, float]]:
        out = []
        for pid in sorted(self.messages):
            msg = self.messages[pid]
            for node in sorted(msg.receptions):
                t, _ = msg.receptions[node]
                out.append((pid, node, (t - msg.generated_at) / 1000.0))
        return out


def bin_pdr_by_distance(ledger: MetricsLedger, bin_width: float = BIN_WIDTH_M,
                        max_distance: Optional[float] = None) -> dict[int, tuple[int, int]]:
    """Map bin index -> (delivered, eligible), summed over every message.

    Eligible vehicles are binned by their distance from the source when the
    message was generated; entrants are binned where they received it.  Bins
    with no vehicles at all are absent.
    """
    bins: dict[int, list[int]] = {}
    for msg in ledger.messages.values():
        for node, d in msg.eligible.items():
            b = bins.setdefault(int(d // bin_width), [0, 0])
            b[1] += 1
            if node in msg.receptions:
                b[0] += 1
        for node, (_, d) in msg.receptions.items():
            if node not in msg.eligible:
                bins.setdefault(int(d // bin_width), [0, 0])[0] += 1
    if max_distance is not None:
        bins = {k: v for k, v in bins.items() if k * bin_width < max_distance}
    return {k: (v[0], v[1]) for k, v in sorted(bins.items())}


@dataclass
class RunResult:
    algorithm: str
    density: int
    seed: int
    transmissions: int = 0
    mean_pdr: float = math.nan
    pdr_per_message: list[float] = field(default_factory=list)
    latencies_ms: list[float] = field(default_factory=list)
    latency_rows: list[tuple[int, int, int, float]] = field(default_factory=list)
    bins: dict[int, tuple[int, int]] = field(default_factory=dict)
    dcc_drops: int = 0
    cam_tx: int = 0
    min_release_gap_us: Optional[int] = None
    tc3_gaps_us: list[int] = field(default_factory=list)
    tc3_dwell_us: list[int] = field(default_factory=list)
    events: int = 0
    wall_s: float = 0.0
    error: Optional[str] = None

    @classmethod
    def from_ledger(cls, algorithm: str, density: int, seed: int, ledger: MetricsLedger) -> "RunResult":
        lat = ledger.latency_samples()
        return cls(
            algorithm=algorithm,
            density=density,
            seed=seed,
            transmissions=ledger.total_transmissions,
            mean_pdr=ledger.mean_pdr(),
            pdr_per_message=ledger.pdr_values(),
            latencies_ms=[x[2] for x in lat],
            latency_rows=[(p.source, p.sequence, n, ms) for p, n, ms in lat],
            bins=bin_pdr_by_distance(ledger),
            dcc_drops=ledger.dcc_drops,
            cam_tx=ledger.cam_tx,
        )


def t_interval(values: Sequence[float], confidence: float = 0.95) -> float:
    """Half width of the Student-t confidence interval of the mean."""
    from scipy import stats

    vals = [v for v in values if not math.isnan(v)]
    if len(vals) < 2:
        return math.nan
    sem = float(np.std(vals, ddof=1)) / math.sqrt(len(vals))
    return float(stats.t.ppf(0.5 + confidence / 2, len(vals) - 1)) * sem


@dataclass
class CellSummary:
    algorithm: str
    density: int
    runs: int
    failed: int
    tx_mean: float
    tx_ci: float
    pdr_mean: float
    pdr_ci: float
    lat_p50: float
    lat_p90: float
    lat_p99: float
    lat_n: int
    lat_frac_under_1s: float
    dcc_drops_mean: float
    tc3_gap_median_ms: float
    min_release_gap_ms: float


def _pct(arr: np.ndarray, q: float) -> float:
    return float(np.percentile(arr, q)) if arr.size else math.nan


def summarize_cell(results: Sequence[RunResult]) -> CellSummary:
    ok = [r for r in results if r.error is None]
    lat = np.asarray([x for r in ok for x in r.latencies_ms])
    gaps = np.asarray([g for r in ok for g in r.tc3_gaps_us])
    mins = [r.min_release_gap_us for r in ok if r.min_release_gap_us is not None]
    tx = [r.transmissions for r in ok]
    pdr = [r.mean_pdr for r in ok]
    nan = math.nan
    return CellSummary(
        algorithm=results[0].algorithm,
        density=results[0].density,
        runs=len(results),
        failed=len(results) - len(ok),
        tx_mean=float(np.mean(tx)) if tx else nan,
        tx_ci=t_interval(tx),
        pdr_mean=float(np.nanmean(pdr)) if pdr and not all(map(math.isnan, pdr)) else nan,
        pdr_ci=t_interval(pdr),
        lat_p50=_pct(lat, 50),
        lat_p90=_pct(lat, 90),
        lat_p99=_pct(lat, 99),
        lat_n=int(lat.size),
        lat_frac_under_1s=float(np.mean(lat < 1000.0)) if lat.size else nan,
        dcc_drops_mean=float(np.mean([r.dcc_drops for r in ok])) if ok else nan,
        tc3_gap_median_ms=float(np.median(gaps)) / 1000.0 if gaps.size else nan,
        min_release_gap_ms=min(mins) / 1000.0 if mins else nan,
    )


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return f"{v:.6f}"
    return str(v)


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


SUMMARY_COLUMNS = (
    "algorithm", "density", "runs", "failed", "tx_mean", "tx_ci95", "pdr_mean", "pdr_ci95",
    "latency_p50_ms", "latency_p90_ms", "latency_p99_ms", "latency_samples",
    "latency_frac_under_1s", "dcc_drops_mean", "tc3_gap_median_ms", "min_release_gap_ms",
)
BIN_COLUMNS = ("algorithm", "density", "bin_start_m", "bin_end_m", "delivered", "eligible", "pdr")
LATENCY_COLUMNS = ("algorithm", "density", "seed", "packet_source", "packet_seq", "node", "latency_ms")


class ResultTable:
    """Per-cell summaries keyed by (algorithm, density), one row per density in text form."""

    def __init__(self, results: Sequence[RunResult]):
        self.results = list(results)
        groups: dict[tuple[str, int], list[RunResult]] = {}
        for r in self.results:
            groups.setdefault((r.algorithm, r.density), []).append(r)
        self.groups = groups
        self.cells = {k: summarize_cell(v) for k, v in groups.items()}

    def __getitem__(self, key: tuple[str, int]) -> CellSummary:
        return self.cells[key]

    def keys(self):
        return self.cells.keys()

    def summary_rows(self):
        for key in sorted(self.cells):
            c = self.cells[key]
            yield (c.algorithm, c.density, c.runs, c.failed, c.tx_mean, c.tx_ci, c.pdr_mean,
                   c.pdr_ci, c.lat_p50, c.lat_p90, c.lat_p99, c.lat_n, c.lat_frac_under_1s,
                   c.dcc_drops_mean, c.tc3_gap_median_ms, c.min_release_gap_ms)

    def bin_rows(self, bin_width: float = BIN_WIDTH_M):
        for key in sorted(self.groups):
            pooled: dict[int, list[int]] = {}
            for r in self.groups[key]:
                if r.error is not None:
                    continue
                for b, (dlv, elig) in r.bins.items():
                    acc = pooled.setdefault(b, [0, 0])
                    acc[0] += dlv
                    acc[1] += elig
            for b in sorted(pooled):
                dlv, elig = pooled[b]
                pdr = dlv / elig if elig else math.nan
                yield (key[0], key[1], b * bin_width, (b + 1) * bin_width, dlv, elig, pdr)

    def latency_rows(self):
        for r in sorted(self.results, key=lambda r: (r.algorithm, r.density, r.seed)):
            for src, seq, node, ms in r.latency_rows:
                yield (r.algorithm, r.density, r.seed, src, seq, node, ms)

    def write(self, out_dir) -> list[str]:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = [out / "summary.csv", out / "pdr_bins.csv", out / "latency.csv"]
        _write_csv(files[0], SUMMARY_COLUMNS, self.summary_rows())
        _write_csv(files[1], BIN_COLUMNS, self.bin_rows())
        _write_csv(files[2], LATENCY_COLUMNS, self.latency_rows())
        return [str(f) for f in files]

    def format_text(self) -> str:
        algos = sorted({k[0] for k in self.cells})
        dens = sorted({k[1] for k in self.cells})
        lines = []
        for title, attr, fmt in (("mean DENM transmissions", "tx_mean", "{:10.1f}"),
                                 ("mean PDR", "pdr_mean", "{:10.3f}"),
                                 ("latency p90 [ms]", "lat_p90", "{:10.1f}")):
            lines.append(title)
            lines.append("density " + "".join(f"{a:>10}" for a in algos))
            for d in dens:
                row = [fmt.format(getattr(self.cells[(a, d)], attr)) if (a, d) in self.cells
                       else f"{'-':>10}" for a in algos]
                lines.append(f"{d:>7} " + "".join(row))
            lines.append("")
        return "\n".join(lines)
