"""Constant-work benchmark harness: run-count rule, timing, counters, sweeps.

Timing and counter collection are separate passes.  The timed pass runs
``warmup`` untimed products and then ``runs`` timed ones, split into
batches; each worker repeats its row block ``batch`` times without a
barrier between repetitions, so per-run time is the batch time divided by
the batch size and the reported deviation is taken across batches.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import sparse
from .gen import GenSpec, Kind, generate, parse_spec
from .perfcount.hardware import CapabilityError, collect_hardware, load_event_map
from .perfcount.metrics import COLUMNS, METRIC_FIELDS, MetricsRecord, csv_to_rows, rows_to_csv
from .perfcount.simulated import InstructionModel, simulated_counters
from .simcache.config import CacheConfig, sandy_bridge
from .simcache.sim import simulate_multicore
from .simcache.trace import AccessTrace, Layout, trace_spmv

WORK_UNITS = 2**33
DEFAULT_THREADS = (1, 2, 4, 8, 16)
PROVIDERS = ("simulated", "hardware")
PROVIDER_ENV = "SPMVLAB_PROVIDER"
REPORT_COLUMNS = COLUMNS + ("runs", "mean_time_s", "std_time_s", "provider", "seed", "config_hash")


class SweepError(RuntimeError):
    """A sweep stopped early; ``records`` holds what completed."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


class MixedConfigError(ValueError):
    pass


def num_runs(nnz: int) -> int:
    if nnz < 1:
        raise ValueError("nnz must be positive")
    return max(1, WORK_UNITS // nnz)


def default_provider() -> str:
    name = os.environ.get(PROVIDER_ENV, "simulated").strip().lower()
    if name not in PROVIDERS:
        raise ValueError(f"{PROVIDER_ENV}={name!r}; expected one of {PROVIDERS}")
    return name


@dataclass
class BenchPlan:
    matrix: GenSpec | str | os.PathLike
    threads: tuple[int, ...] = DEFAULT_THREADS
    runs: int | None = None
    warmup: int = 3
    provider: str = field(default_factory=default_provider)
    output: str | os.PathLike | None = None
    cache: CacheConfig = field(default_factory=sandy_bridge)
    sim_warmup: int = 1
    instructions: InstructionModel = InstructionModel()
    event_map: dict | None = None
    batches: int = 10
    pin: bool = True
    label: str | None = None

    def __post_init__(self):
        self.threads = tuple(int(t) for t in self.threads)
        if not self.threads or any(t < 1 for t in self.threads):
            raise ValueError("thread list must be nonempty with every entry >= 1")
        if self.runs is not None and self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.warmup < 0 or self.sim_warmup < 0:
            raise ValueError("warmup counts must be >= 0")
        if self.batches < 1:
            raise ValueError("batches must be >= 1")
        if self.provider not in PROVIDERS:
            raise ValueError(f"provider must be one of {PROVIDERS}, got {self.provider!r}")

    def config_hash(self) -> str:
        if self.provider == "simulated":
            blob = {"cache": self.cache.to_dict(), "instructions": dataclasses.asdict(self.instructions),
                    "sim_warmup": self.sim_warmup}
        else:
            blob = {"events": self.event_map if self.event_map is not None else load_event_map()}
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class BenchRecord:
    metrics: MetricsRecord
    runs: int
    mean_time_s: float
    std_time_s: float
    provider: str
    seed: int
    config_hash: str

    @property
    def kind(self) -> str:
        return self.metrics.kind

    @property
    def scale(self) -> int:
        return self.metrics.scale

    @property
    def nnz(self) -> int:
        return self.metrics.nnz

    @property
    def threads(self) -> int:
        return self.metrics.threads

    @property
    def gflops(self) -> float:
        return self.metrics.gflops

    def row(self) -> dict:
        d = self.metrics.row()
        d.update(runs=self.runs, mean_time_s=self.mean_time_s, std_time_s=self.std_time_s,
                 provider=self.provider, seed=self.seed, config_hash=self.config_hash)
        return d

    @classmethod
    def from_row(cls, row: dict) -> "BenchRecord":
        return cls(
            metrics=MetricsRecord.from_row(row),
            runs=int(row["runs"]),
            mean_time_s=float(row["mean_time_s"]),
            std_time_s=float(row["std_time_s"]),
            provider=str(row["provider"]),
            seed=int(row["seed"]),
            config_hash=str(row["config_hash"]),
        )


# -- matrix source -----------------------------------------------------------

@dataclass
class MatrixSource:
    matrix: sparse.CsrMatrix
    kind: str
    scale: int
    seed: int


def resolve_matrix(source, label: str | None = None) -> MatrixSource:
    """A GenSpec, a ``kind:scale[:seed[:perm]]`` string, or a matrix file."""
    if isinstance(source, GenSpec):
        spec = source
    else:
        path = os.fspath(source)
        if os.path.exists(path):
            a = sparse.load(path)
            scale = int(round(math.log2(a.nrows))) if a.nrows else 0
            return MatrixSource(a, label or "file", scale, 0)
        spec = parse_spec(path)
    a = sparse.from_triplets(generate(spec))
    return MatrixSource(a, label or spec.kind.value, spec.scale, spec.seed)


# -- timing ------------------------------------------------------------------

def _pinning_initializer(cpus: list[int]):
    counter = itertools.count()
    lock = threading.Lock()

    def init():
        with lock:
            k = next(counter)
        try:
            os.sched_setaffinity(0, {cpus[k % len(cpus)]})
        except OSError:
            pass

    return init


def available_cpus() -> list[int] | None:
    try:
        return sorted(os.sched_getaffinity(0))
    except AttributeError:
        return None


def make_pool(threads: int, pin: bool) -> ThreadPoolExecutor | None:
    if threads == 1:
        return None
    cpus = available_cpus() if pin else None
    init = _pinning_initializer(cpus) if cpus else None
    return ThreadPoolExecutor(max_workers=threads, initializer=init)


@dataclass
class Timing:
    runs: int
    batch_sizes: list[int]
    batch_seconds: list[float]
    y: np.ndarray

    @property
    def total_seconds(self) -> float:
        return sum(self.batch_seconds)

    @property
    def mean(self) -> float:
        return self.total_seconds / self.runs

    @property
    def std(self) -> float:
        per_run = [t / b for t, b in zip(self.batch_seconds, self.batch_sizes)]
        return float(np.std(per_run, ddof=1)) if len(per_run) > 1 else 0.0


def time_spmv(a: sparse.CsrMatrix, x: np.ndarray, threads: int, runs: int, warmup: int = 3,
              batches: int = 10, pin: bool = True) -> Timing:
    nb = min(batches, runs)
    sizes = [runs // nb + (1 if i < runs % nb else 0) for i in range(nb)]
    y = np.empty(a.nrows)
    pool = make_pool(threads, pin)
    try:
        for _ in range(warmup):
            sparse.spmv_parallel(a, x, threads, out=y, pool=pool)
        seconds = []
        for b in sizes:
            t0 = time.perf_counter()
            sparse.spmv_parallel(a, x, threads, out=y, pool=pool, reps=b)
            seconds.append(time.perf_counter() - t0)
    finally:
        if pool is not None:
            pool.shutdown()
    return Timing(runs, sizes, seconds, y)


# -- counters ----------------------------------------------------------------

def block_traces(a: sparse.CsrMatrix, threads: int) -> list[AccessTrace]:
    layout = Layout.packed(a)
    traces = []
    for lo, hi in sparse.row_blocks(a.nrows, threads):
        if hi > lo:
            traces.append(trace_spmv(a, layout, rows=(lo, hi)))
        else:
            empty = np.empty(0, np.uint64)
            traces.append(AccessTrace(empty, np.empty(0, np.uint8), np.empty(0, np.uint8), nnz=0, nrows=0))
    return traces


def simulated_pass(a: sparse.CsrMatrix, threads: int, plan: BenchPlan):
    r = simulate_multicore(block_traces(a, threads), plan.cache.replace(cores=threads), warmup=plan.sim_warmup)
    return simulated_counters(r, plan.instructions)


def hardware_pass(a: sparse.CsrMatrix, x: np.ndarray, threads: int, runs: int, plan: BenchPlan):
    y = np.empty(a.nrows)
    # the pool is created inside the measured region so inherited counters see its threads
    return collect_hardware(lambda: sparse.spmv_parallel(a, x, threads, out=y, reps=runs), plan.event_map)


# -- driver ------------------------------------------------------------------

def run_metadata(plan: BenchPlan) -> dict:
    cpus = available_cpus()
    return {
        "provider": plan.provider,
        "config_hash": plan.config_hash(),
        "warmup_runs": plan.warmup,
        "timing_batches": plan.batches,
        "x_init": "ones",
        "pinning": ("sequential" if plan.pin and cpus else "none"),
        "cpus": cpus,
        "rng": "numpy PCG64",
        "sim_warmup_passes": plan.sim_warmup if plan.provider == "simulated" else None,
        "cache": plan.cache.to_dict() if plan.provider == "simulated" else None,
        "instructions": dataclasses.asdict(plan.instructions) if plan.provider == "simulated" else None,
    }


def run_bench(plan: BenchPlan, source: MatrixSource | None = None) -> list[BenchRecord]:
    if plan.provider == "hardware":
        # fail before any timing if the counters cannot be opened
        collect_hardware(lambda: None, plan.event_map)
    src = source or resolve_matrix(plan.matrix, plan.label)
    a = src.matrix
    if a.nnz < 1:
        raise ValueError("matrix has no nonzeros")
    x = np.ones(a.ncols)
    runs = plan.runs if plan.runs is not None else num_runs(a.nnz)
    chash = plan.config_hash()
    records = []
    for t in plan.threads:
        timing = time_spmv(a, x, t, runs, plan.warmup, plan.batches, plan.pin)
        if plan.provider == "simulated":
            counters = simulated_pass(a, t, plan)
        else:
            counters = hardware_pass(a, x, t, runs, plan)
        m = MetricsRecord.compute(src.kind, src.scale, a.nnz, t, counters, timing.mean)
        records.append(BenchRecord(m, runs, timing.mean, timing.std, plan.provider, src.seed, chash))
    if plan.output is not None:
        write_report(plan.output, records, run_metadata(plan))
    return records


def sweep(kind, scales, template: BenchPlan, output=None) -> list[BenchRecord]:
    """Run the template plan at each scale; on failure flush what finished."""
    kind = Kind(kind)
    base = template.matrix if isinstance(template.matrix, GenSpec) else None
    records: list[BenchRecord] = []
    meta = run_metadata(template)
    output = output if output is not None else template.output
    try:
        for s in scales:
            if base is not None and base.kind is kind:
                spec = dataclasses.replace(base, scale=s)
            else:
                spec = GenSpec(kind, s, seed=base.seed if base else 0, permute=kind is Kind.RMAT)
            plan = dataclasses.replace(template, matrix=spec, output=None)
            records.extend(run_bench(plan))
    except (Exception, KeyboardInterrupt) as exc:
        if output is not None:
            write_report(output, records, meta, partial=True)
        raise SweepError(f"sweep stopped: {exc}", records) from exc
    if output is not None:
        write_report(output, records, meta)
    return records


# -- report files ------------------------------------------------------------

def report_paths(output) -> tuple[str, str, str]:
    """``out`` or ``out.csv``/``out.json`` -> (csv, json, plot-data directory)."""
    stem = os.fspath(output)
    root, ext = os.path.splitext(stem)
    if ext.lower() in (".csv", ".json"):
        stem = root
    return stem + ".csv", stem + ".json", stem + "_plot"


def records_csv(records: list[BenchRecord]) -> str:
    return rows_to_csv([r.row() for r in records], REPORT_COLUMNS)


def records_json(records: list[BenchRecord], meta: dict, partial: bool = False) -> str:
    return json.dumps({"meta": meta, "partial": partial, "records": [r.row() for r in records]}, indent=1)


def plot_tables(records: list[BenchRecord]) -> dict[tuple[str, str], str]:
    """One CSV per (metric, kind): scale, nnz, then a column per thread count."""
    out = {}
    kinds = sorted({r.kind for r in records})
    threads = sorted({r.threads for r in records})
    for kind in kinds:
        rows = [r for r in records if r.kind == kind]
        sizes = sorted({(r.nnz, r.scale) for r in rows})
        for metric in METRIC_FIELDS:
            cells = {(r.nnz, r.threads): getattr(r.metrics, metric) for r in rows}
            table = []
            for nnz, scale in sizes:
                line = {"scale": scale, "nnz": nnz}
                for t in threads:
                    line[f"t{t}"] = cells.get((nnz, t), "")
                table.append(line)
            out[(metric, kind)] = rows_to_csv(table, ["scale", "nnz"] + [f"t{t}" for t in threads])
    return out


def write_report(output, records: list[BenchRecord], meta: dict, partial: bool = False):
    csv_path, json_path, plot_dir = report_paths(output)
    os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
    sparse._write_atomic(csv_path, records_csv(records).encode())
    sparse._write_atomic(json_path, records_json(records, meta, partial).encode())
    os.makedirs(plot_dir, exist_ok=True)
    for (metric, kind), text in plot_tables(records).items():
        sparse._write_atomic(os.path.join(plot_dir, f"{metric}.{kind}.csv"), text.encode())


def load_report(path) -> tuple[list[BenchRecord], dict]:
    """Read a report written by :func:`write_report` (JSON or CSV)."""
    with open(path) as fh:
        text = fh.read()
    if os.fspath(path).lower().endswith(".json"):
        doc = json.loads(text)
        meta = dict(doc.get("meta", {}))
        meta["partial"] = bool(doc.get("partial", False))
        return [BenchRecord.from_row(r) for r in doc["records"]], meta
    return [BenchRecord.from_row(r) for r in csv_to_rows(text)], {}


def merge_reports(paths, force: bool = False) -> tuple[list[BenchRecord], dict]:
    records, metas = [], []
    for p in paths:
        recs, meta = load_report(p)
        records.extend(recs)
        metas.append(meta)
    hashes = sorted({r.config_hash for r in records})
    if len(hashes) > 1 and not force:
        raise MixedConfigError(f"inputs mix config hashes {hashes}; pass force to merge anyway")
    records.sort(key=lambda r: (r.kind, r.nnz, r.threads))
    meta = {"merged_from": [os.fspath(p) for p in paths], "config_hashes": hashes,
            "partial": any(m.get("partial", False) for m in metas)}
    return records, meta


__all__ = [
    "BenchPlan",
    "BenchRecord",
    "CapabilityError",
    "MatrixSource",
    "MixedConfigError",
    "REPORT_COLUMNS",
    "SweepError",
    "Timing",
    "block_traces",
    "default_provider",
    "load_report",
    "merge_reports",
    "num_runs",
    "plot_tables",
    "resolve_matrix",
    "run_bench",
    "run_metadata",
    "sweep",
    "time_spmv",
    "write_report",
]
