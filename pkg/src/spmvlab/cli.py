"""spmvlab command line: gen, bench, simulate, sweep, report.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import bench, sparse
from .gen import MAX_SCALE, MIN_SCALE, GenSpec, Kind, ShapeError, SpecError, generate, permute_random
from .perfcount.hardware import CapabilityError, load_event_map
from .perfcount.metrics import MetricError, l2_miss_rate, l2_stall_fraction, l3_miss_rate, prefetch_miss_rate
from .perfcount.simulated import InstructionModel, simulated_counters
from .simcache import config as cachecfg
from .simcache.config import ConfigError
from .simcache.sim import simulate_multicore

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _scale(text: str) -> int:
    try:
        s = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not MIN_SCALE <= s <= MAX_SCALE:
        raise argparse.ArgumentTypeError(f"scale must be in [{MIN_SCALE}, {MAX_SCALE}]")
    return s


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonnegative(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _seed(text: str) -> int:
    v = _nonnegative(text)
    if v >= 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _thread_list(text: str) -> list[int]:
    return [_positive(p) for p in text.split(",") if p.strip()] or _fail("empty thread list")


def _scale_range(text: str) -> list[int]:
    """``8:14`` (inclusive), ``8..14`` or ``8,10,12``."""
    for sep in (":", ".."):
        if sep in text:
            lo, hi = (_scale(p) for p in text.split(sep, 1))
            if hi < lo:
                raise argparse.ArgumentTypeError("empty scale range")
            return list(range(lo, hi + 1))
    return [_scale(p) for p in text.split(",")]


def _fail(msg):
    raise argparse.ArgumentTypeError(msg)


def _add_cache_flags(p):
    p.add_argument("--config", help="cache config INI file")
    p.add_argument("--preset", choices=sorted(cachecfg.PRESETS), help="named cache preset (default sandybridge)")
    p.add_argument("--no-prefetch", action="store_true", help="disable the L2 streamer")
    p.add_argument("--no-l3", action="store_true", help="L2 misses go straight to DRAM")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spmvlab", description="SpMV cache-behaviour laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a matrix")
    g.add_argument("--kind", required=True, choices=[k.value for k in Kind])
    g.add_argument("--scale", required=True, type=_scale)
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--permute", dest="permute", action="store_true", default=None,
                   help="randomly permute rows and columns (default for rmat)")
    g.add_argument("--no-permute", dest="permute", action="store_false")
    g.add_argument("-o", "--output", help="write binary CSR, or Matrix Market when the name ends in .mtx")

    b = sub.add_parser("bench", help="time SpMV and collect counters")
    b.add_argument("matrix", help="matrix file or kind:scale[:seed[:perm|noperm]]")
    b.add_argument("--threads", type=_thread_list, default=list(bench.DEFAULT_THREADS))
    b.add_argument("--runs", type=_positive, help="override the constant-work run count")
    b.add_argument("--warmup", type=_nonnegative, default=3)
    b.add_argument("--provider", choices=bench.PROVIDERS)
    b.add_argument("--events", help="event-map INI for the hardware provider")
    _add_cache_flags(b)
    b.add_argument("-o", "--output", help="report path stem (writes .csv, .json and _plot/)")

    s = sub.add_parser("simulate", help="simulate one SpMV pass through the cache model")
    s.add_argument("matrix", help="matrix file or kind:scale[:seed[:perm|noperm]]")
    s.add_argument("--threads", type=_positive, default=1)
    s.add_argument("--warmup", type=_nonnegative, default=1, help="unmeasured passes before the measured one")
    _add_cache_flags(s)
    s.add_argument("-o", "--output", help="write JSON here instead of stdout")

    w = sub.add_parser("sweep", help="bench a range of scales")
    w.add_argument("--kind", required=True, choices=[k.value for k in Kind])
    w.add_argument("--scales", required=True, type=_scale_range, help="e.g. 8:14")
    w.add_argument("--seed", type=_seed, default=0)
    w.add_argument("--threads", type=_thread_list, default=list(bench.DEFAULT_THREADS))
    w.add_argument("--runs", type=_positive)
    w.add_argument("--warmup", type=_nonnegative, default=3)
    w.add_argument("--provider", choices=bench.PROVIDERS)
    w.add_argument("--events")
    _add_cache_flags(w)
    w.add_argument("-o", "--output", required=True)

    r = sub.add_parser("report", help="merge report files and emit plot data")
    r.add_argument("inputs", nargs="+")
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--force", action="store_true", help="merge even if config hashes differ")
    return ap


def _cache_config(args) -> cachecfg.CacheConfig:
    if args.config and args.preset:
        raise UsageError("--config and --preset are mutually exclusive")
    cfg = cachecfg.load_file(args.config) if args.config else cachecfg.preset(args.preset or "sandybridge")
    if args.no_prefetch:
        cfg = cfg.without_prefetch()
    if args.no_l3:
        cfg = cfg.replace(l3_bypass=True)
    return cfg


def _provider(args) -> str:
    return args.provider or bench.default_provider()


def cmd_gen(args, out) -> int:
    permute = args.permute if args.permute is not None else args.kind == Kind.RMAT.value
    spec = GenSpec(args.kind, args.scale, seed=args.seed)
    t = generate(spec)
    if permute:
        t, _, _ = permute_random(t, args.seed)
    a = sparse.from_triplets(t)
    if args.output:
        sparse.save(a, args.output)
    print(f"n {a.nrows}", file=out)
    print(f"m {a.nnz}", file=out)
    print(f"element_count {sparse.element_count(a)}", file=out)
    print(f"problem_bytes {sparse.problem_bytes(a.nrows, a.nnz)}", file=out)
    return EXIT_OK


def simulate_report(a: sparse.CsrMatrix, cfg, threads: int, warmup: int) -> dict:
    r = simulate_multicore(bench.block_traces(a, threads), cfg.replace(cores=threads), warmup=warmup)
    c = simulated_counters(r, InstructionModel())
    metrics = {}
    for name, fn in (("l2_miss_rate", l2_miss_rate), ("l3_miss_rate", l3_miss_rate),
                     ("prefetch_miss_rate", prefetch_miss_rate), ("l2_stall_fraction", l2_stall_fraction)):
        try:
            metrics[name] = fn(c)
        except MetricError:
            metrics[name] = None
    conservation = {
        "l2_probes_equal_l1_misses": r.l2.demand_accesses == r.l1.demand_misses,
        "l3_probes_equal_l2_misses": cfg.l3_bypass or r.l3.demand_accesses == r.l2.demand_misses,
        "dram_demand_equals_last_level_misses":
            r.dram_demand == (r.l2.demand_misses if cfg.l3_bypass else r.l3.demand_misses),
    }
    return {
        "nrows": a.nrows,
        "nnz": a.nnz,
        "threads": threads,
        "warmup_passes": warmup,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "result": r.to_dict(),
        "counters": dataclasses.asdict(c),
        "metrics": metrics,
        "conservation": conservation,
    }


def cmd_simulate(args, out) -> int:
    cfg = _cache_config(args)
    src = bench.resolve_matrix(args.matrix)
    doc = simulate_report(src.matrix, cfg, args.threads, args.warmup)
    doc["matrix"] = {"kind": src.kind, "scale": src.scale, "seed": src.seed}
    text = json.dumps(doc, indent=1, sort_keys=True)
    if args.output:
        sparse._write_atomic(args.output, text.encode())
    else:
        print(text, file=out)
    return EXIT_OK


def _plan(args, matrix) -> bench.BenchPlan:
    provider = _provider(args)
    return bench.BenchPlan(
        matrix=matrix,
        threads=tuple(args.threads),
        runs=args.runs,
        warmup=args.warmup,
        provider=provider,
        output=args.output,
        cache=_cache_config(args),
        event_map=load_event_map(args.events) if args.events else None,
    )


def _print_records(records, out):
    for r in records:
        print(f"{r.kind} scale {r.scale} nnz {r.nnz} threads {r.threads}: "
              f"{r.gflops:.4f} GFLOPS, L2 {r.metrics.l2_miss_rate:.3f}/k instr, runs {r.runs}", file=out)


def cmd_bench(args, out) -> int:
    records = bench.run_bench(_plan(args, args.matrix))
    _print_records(records, out)
    return EXIT_OK


def cmd_sweep(args, out) -> int:
    plan = _plan(args, GenSpec(args.kind, args.scales[0], seed=args.seed, permute=args.kind == Kind.RMAT.value))
    try:
        records = bench.sweep(args.kind, args.scales, plan, output=args.output)
    except bench.SweepError as exc:
        _print_records(exc.records, out)
        print(f"partial results written ({len(exc.records)} records): {exc.__cause__}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_records(records, out)
    return EXIT_OK


def cmd_report(args, out) -> int:
    try:
        records, meta = bench.merge_reports(args.inputs, force=args.force)
    except bench.MixedConfigError as exc:
        raise UsageError(str(exc)) from None
    bench.write_report(args.output, records, meta, partial=meta["partial"])
    print(f"merged {len(records)} records into {bench.report_paths(args.output)[0]}", file=out)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "bench": cmd_bench, "simulate": cmd_simulate, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    try:
        return COMMANDS[args.command](args, out)
    except (UsageError, SpecError, ConfigError, ValueError) as exc:
        if isinstance(exc, (ShapeError, sparse.FormatError, MetricError)):
            print(f"spmvlab: error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"spmvlab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CapabilityError, RuntimeError) as exc:
        print(f"spmvlab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
