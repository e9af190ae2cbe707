"""Line-delimited JSON event traces."""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterator

FIELDS = ("time_us", "node", "event", "packet_source", "packet_seq", "detail")


def trace_filename(plan) -> str:
    return f"trace_{plan.algorithm.value}_d{plan.density}_s{plan.seed}.jsonl"


class TraceWriter:
    """Callable sink writing one compact JSON object per line."""

    def __init__(self, fh: IO[str]):
        self.fh = fh
        self.records = 0

    def __call__(self, rec: dict) -> None:
        self.fh.write(json.dumps(rec, separators=(",", ":")))
        self.fh.write("\n")
        self.records += 1

    @classmethod
    def open(cls, path) -> "TraceWriter":
        return cls(open(path, "w", encoding="utf-8", newline="\n"))

    def close(self) -> None:
        self.fh.close()


class TraceBuffer(list):
    """In-memory sink, handy in tests."""

    def __call__(self, rec: dict) -> None:
        self.append(rec)


def read_trace(path) -> Iterator[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
