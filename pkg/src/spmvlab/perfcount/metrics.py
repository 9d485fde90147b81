"""Raw counter records and the five derived SpMV metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields


class MetricError(ValueError):
    """A metric is undefined for the given counters (zero denominator)."""


@dataclass(frozen=True)
class RawCounters:
    l2_demand_misses: int
    l3_demand_misses: int
    prefetch_l2_misses: int
    l2_stall_cycles: int
    instructions: int
    total_cycles: int

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v < 2**64:
                raise ValueError(f"{f.name} must be an unsigned 64-bit count, got {v!r}")
        if self.l2_stall_cycles > self.total_cycles:
            raise ValueError("l2_stall_cycles exceeds total_cycles")

    def scaled(self, k: int) -> "RawCounters":
        return RawCounters(**{f.name: getattr(self, f.name) * k for f in fields(self)})


RAW_FIELDS = tuple(f.name for f in fields(RawCounters))


def _per_kilo_instruction(count: int, c: RawCounters) -> float:
    if c.instructions <= 0:
        raise MetricError("instruction count is zero")
    return 1000.0 * count / c.instructions


def l2_miss_rate(c: RawCounters) -> float:
    return _per_kilo_instruction(c.l2_demand_misses, c)


def l3_miss_rate(c: RawCounters) -> float:
    return _per_kilo_instruction(c.l3_demand_misses, c)


def prefetch_miss_rate(c: RawCounters) -> float:
    """Prefetcher fills from beyond L2 per thousand instructions (higher is better)."""
    return _per_kilo_instruction(c.prefetch_l2_misses, c)


def l2_stall_fraction(c: RawCounters) -> float:
    if c.total_cycles <= 0:
        raise MetricError("total cycle count is zero")
    return c.l2_stall_cycles / c.total_cycles


def gflops(nnz: int, runtime_seconds: float) -> float:
    if not runtime_seconds > 0:
        raise MetricError(f"runtime must be positive, got {runtime_seconds!r}")
    return 2 * nnz / runtime_seconds / 1e9


METRIC_FIELDS = ("l2_miss_rate", "l3_miss_rate", "prefetch_miss_rate", "l2_stall_fraction", "gflops")
COLUMNS = ("kind", "scale", "nnz", "threads") + RAW_FIELDS + METRIC_FIELDS + ("runtime_seconds",)


@dataclass(frozen=True)
class MetricsRecord:
    kind: str
    scale: int
    nnz: int
    threads: int
    counters: RawCounters
    runtime_seconds: float
    l2_miss_rate: float
    l3_miss_rate: float
    prefetch_miss_rate: float
    l2_stall_fraction: float
    gflops: float

    @classmethod
    def compute(cls, kind, scale, nnz, threads, counters: RawCounters, runtime_seconds: float) -> "MetricsRecord":
        return cls(
            kind=kind,
            scale=scale,
            nnz=nnz,
            threads=threads,
            counters=counters,
            runtime_seconds=runtime_seconds,
            l2_miss_rate=l2_miss_rate(counters),
            l3_miss_rate=l3_miss_rate(counters),
            prefetch_miss_rate=prefetch_miss_rate(counters),
            l2_stall_fraction=l2_stall_fraction(counters),
            gflops=gflops(nnz, runtime_seconds),
        )

    def recompute(self) -> "MetricsRecord":
        return self.compute(self.kind, self.scale, self.nnz, self.threads, self.counters, self.runtime_seconds)

    def row(self) -> dict:
        d = {"kind": self.kind, "scale": self.scale, "nnz": self.nnz, "threads": self.threads}
        d.update(asdict(self.counters))
        d.update({m: getattr(self, m) for m in METRIC_FIELDS})
        d["runtime_seconds"] = self.runtime_seconds
        return d

    @classmethod
    def from_row(cls, row: dict) -> "MetricsRecord":
        counters = RawCounters(**{k: int(row[k]) for k in RAW_FIELDS})
        return cls(
            kind=str(row["kind"]),
            scale=int(row["scale"]),
            nnz=int(row["nnz"]),
            threads=int(row["threads"]),
            counters=counters,
            runtime_seconds=float(row["runtime_seconds"]),
            **{m: float(row[m]) for m in METRIC_FIELDS},
        )


def rows_to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    # floats go through repr so a CSV round trip is exact
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items() if k in columns})
    return buf.getvalue()


def csv_to_rows(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def records_to_csv(records: list[MetricsRecord]) -> str:
    return rows_to_csv([r.row() for r in records], COLUMNS)


def records_to_json(records: list[MetricsRecord]) -> str:
    return json.dumps([r.row() for r in records], indent=1)
