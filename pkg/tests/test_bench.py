import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spmvlab import bench, sparse
from spmvlab.bench import (
    REPORT_COLUMNS,
    BenchPlan,
    MixedConfigError,
    SweepError,
    load_report,
    merge_reports,
    num_runs,
    resolve_matrix,
    run_bench,
    sweep,
    time_spmv,
    write_report,
)
from spmvlab.gen import GenSpec, Kind, generate
from spmvlab.perfcount import CapabilityError, hardware
from spmvlab.perfcount.metrics import gflops
from spmvlab.simcache import desk


def plan(matrix, **kw):
    kw.setdefault("provider", "simulated")
    kw.setdefault("cache", desk())
    kw.setdefault("threads", [1])
    return BenchPlan(matrix, **kw)


def test_num_runs_examples():
    assert num_runs(16_384) == 524_288
    assert num_runs(603_979_776) == 14
    assert num_runs(2**34) == 1
    with pytest.raises(ValueError):
        num_runs(0)


@given(nnz=st.integers(1, 2**33))
def test_constant_work_window(nnz):
    runs = num_runs(nnz)
    assert 2**33 - nnz < nnz * runs <= 2**33
    assert 2**34 - 2 * nnz < 2 * nnz * runs <= 2**34


def test_plan_validation():
    for bad in (dict(threads=[]), dict(threads=[0]), dict(runs=0), dict(warmup=-1), dict(provider="vtune")):
        with pytest.raises(ValueError):
            plan("fd9:8", **bad)
    p = BenchPlan("fd9:8")
    assert p.threads == (1, 2, 4, 8, 16) and p.warmup == 3 and p.runs is None


def test_default_provider_env(monkeypatch):
    monkeypatch.setenv("SPMVLAB_PROVIDER", "hardware")
    assert BenchPlan("fd9:8").provider == "hardware"
    monkeypatch.setenv("SPMVLAB_PROVIDER", "nonsense")
    with pytest.raises(ValueError):
        BenchPlan("fd9:8")
    monkeypatch.delenv("SPMVLAB_PROVIDER")
    assert BenchPlan("fd9:8").provider == "simulated"


def test_fd9_scale8_constant_work_record():
    (r,) = run_bench(plan(GenSpec(Kind.FD9, 8)))
    assert r.nnz == 9 * 2**8
    assert r.runs == num_runs(r.nnz) == 2**33 // (9 * 2**8)
    assert 2**33 - r.nnz < r.nnz * r.runs <= 2**33
    assert r.gflops > 0
    assert r.gflops == gflops(r.nnz, r.mean_time_s) == r.metrics.gflops
    assert r.metrics.runtime_seconds == r.mean_time_s > 0
    assert r.std_time_s >= 0
    assert r.provider == "simulated" and r.kind == "fd9" and r.threads == 1


def test_repeated_runs_do_not_mutate():
    a = sparse.from_triplets(generate(GenSpec(Kind.RMAT, 9, seed=2, permute=True)))
    x = np.ones(a.ncols)
    before = (a.rowptr.copy(), a.colidx.copy(), a.values.copy(), x.copy())
    for t in (1, 3):
        timing = time_spmv(a, x, t, runs=50, warmup=2, batches=4)
        assert timing.y.tobytes() == sparse.spmv(a, x).tobytes()
        assert sum(timing.batch_sizes) == 50 and len(timing.batch_seconds) == 4
        assert timing.mean > 0 and timing.std >= 0
    for old, new in zip(before, (a.rowptr, a.colidx, a.values, x)):
        assert np.array_equal(old, new)


def test_run_bench_thread_list_and_reproducible_counters():
    p = plan("rmat:9:3", threads=[1, 2, 4], runs=20)
    first, second = run_bench(p), run_bench(p)
    assert [r.threads for r in first] == [1, 2, 4]
    assert [r.metrics.counters for r in first] == [r.metrics.counters for r in second]
    assert len({r.config_hash for r in first}) == 1
    assert all(r.seed == 3 for r in first)


def test_sweep_scales():
    records = sweep("fd9", range(8, 13), plan("fd9:8", runs=10))
    assert len(records) == 5
    nnz = [r.nnz for r in records]
    assert all(b == 2 * a for a, b in zip(nnz, nnz[1:]))


def test_sweep_rmat_crosses_l2(tmp_path):
    records = sweep("rmat", [6, 9], plan("rmat:6", runs=5))
    fit, big = records
    assert big.metrics.l2_miss_rate >= 5 * fit.metrics.l2_miss_rate
    assert big.metrics.l2_miss_rate > 0


def test_sweep_partial_flush(tmp_path, monkeypatch):
    real = bench.run_bench
    calls = []

    def flaky(p):
        calls.append(p.matrix.scale)
        if p.matrix.scale == 10:
            raise RuntimeError("boom")
        return real(p)

    monkeypatch.setattr(bench, "run_bench", flaky)
    out = tmp_path / "rep"
    with pytest.raises(SweepError) as exc:
        sweep("fd9", [8, 9, 10, 11], plan("fd9:8", runs=3), output=out)
    assert [r.scale for r in exc.value.records] == [8, 9]
    assert calls == [8, 9, 10]
    doc = json.loads((tmp_path / "rep.json").read_text())
    assert doc["partial"] is True and len(doc["records"]) == 2
    records, meta = load_report(tmp_path / "rep.json")
    assert meta["partial"] is True


def test_report_files(tmp_path):
    records = run_bench(plan("rmat:8", threads=[1, 2], runs=5, output=tmp_path / "r.csv"))
    csv_text = (tmp_path / "r.csv").read_text()
    assert csv_text.splitlines()[0] == ",".join(REPORT_COLUMNS)
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["partial"] is False
    assert doc["meta"]["warmup_runs"] == 3 and doc["meta"]["pinning"] in ("sequential", "none")
    for name in ("r.json", "r.csv"):
        loaded, _ = load_report(tmp_path / name)
        assert [x.row() for x in loaded] == [x.row() for x in records]
    plot = (tmp_path / "r_plot" / "l2_miss_rate.rmat.csv").read_text().splitlines()
    assert plot[0] == "scale,nnz,t1,t2"
    assert plot[1].startswith("8,2048,")
    assert len(os.listdir(tmp_path / "r_plot")) == 5


def test_merge_reports(tmp_path):
    cfg = desk()
    write_report(tmp_path / "b", run_bench(plan("rmat:8", threads=[2, 1], runs=3, cache=cfg)), {})
    write_report(tmp_path / "a", run_bench(plan("fd9:8", runs=3, cache=cfg)), {})
    records, meta = merge_reports([tmp_path / "b.json", tmp_path / "a.csv"])
    keys = [(r.kind, r.nnz, r.threads) for r in records]
    assert keys == sorted(keys) and len(keys) == 3
    write_report(tmp_path / "c", run_bench(plan("fd9:9", runs=3, cache=cfg.without_prefetch())), {})
    with pytest.raises(MixedConfigError):
        merge_reports([tmp_path / "a.json", tmp_path / "c.json"])
    records, meta = merge_reports([tmp_path / "a.json", tmp_path / "c.json"], force=True)
    assert len(meta["config_hashes"]) == 2


def test_hardware_provider_unavailable(monkeypatch):
    def refuse(ptype, config):
        raise OSError(1, "Operation not permitted")

    monkeypatch.setattr(hardware, "_perf_event_open", refuse)
    with pytest.raises(CapabilityError):
        run_bench(plan("fd9:8", provider="hardware", runs=1))


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        run_bench(plan("fd9:8", runs=1, output=blocker / "sub" / "r"))


def test_resolve_matrix_from_file(tmp_path):
    a = sparse.from_triplets(generate(GenSpec(Kind.FD9, 6)))
    sparse.save(a, tmp_path / "m.mtx")
    src = resolve_matrix(tmp_path / "m.mtx", label="fd9")
    assert src.matrix.bitwise_equal(a) and (src.kind, src.scale) == ("fd9", 6)
    assert resolve_matrix("rmat:7:5").matrix.nnz == 1024


def test_idle_workers_get_empty_traces():
    a = sparse.from_triplets(generate(GenSpec(Kind.FD9, 4)))
    traces = bench.block_traces(a, 32)
    assert len(traces) == 32 and sum(len(t) == 0 for t in traces) == 16
    (r,) = run_bench(plan(GenSpec(Kind.FD9, 4), threads=[32], runs=2))
    assert r.metrics.counters.instructions == 10 * 144 + 4 * 16
