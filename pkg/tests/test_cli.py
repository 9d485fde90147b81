import io
import json

import pytest

from spmvlab import sparse
from spmvlab.cli import main
from spmvlab.perfcount import hardware
from spmvlab.simcache import config as cachecfg, desk


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_gen_prints_sizes():
    code, text = run("gen", "--kind", "fd9", "--scale", "11")
    assert code == 0
    fields = dict(line.split() for line in text.splitlines())
    assert fields == {"n": "2048", "m": "18432", "element_count": "38913", "problem_bytes": "262148"}


def test_gen_is_reproducible(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert run("gen", "--kind", "rmat", "--scale", "11", "--seed", "7", "-o", str(a))[0] == 0
    assert run("gen", "--kind", "rmat", "--scale", "11", "--seed", "7", "-o", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".tmp")] == []


def test_gen_matrix_market_and_permute_flags(tmp_path):
    p, q = tmp_path / "p.mtx", tmp_path / "q.mtx"
    run("gen", "--kind", "rmat", "--scale", "6", "-o", str(p))
    run("gen", "--kind", "rmat", "--scale", "6", "--no-permute", "-o", str(q))
    a, b = sparse.load(p), sparse.load(q)
    assert p.read_bytes().startswith(b"%%MatrixMarket")
    assert a.nnz == b.nnz and not a.bitwise_equal(b)


@pytest.mark.parametrize(
    "argv",
    [
        ("gen", "--kind", "rmat", "--scale", "2"),
        ("gen", "--kind", "dense", "--scale", "8"),
        ("gen", "--scale", "8"),
        ("bench", "fd9:8", "--threads", "0"),
        ("simulate", "fd9:8", "--preset", "desk", "--config", "x.ini"),
        ("simulate", "nosuchkind:8"),
        ("sweep", "--kind", "fd9", "--scales", "9:8", "-o", "x"),
        (),
        ("frobnicate",),
    ],
)
def test_usage_errors_exit_2(argv):
    assert run(*argv)[0] == 2


def test_help_exits_0():
    assert run("--help")[0] == 0


def test_io_failure_exits_1(tmp_path):
    code, _ = run("gen", "--kind", "fd9", "--scale", "6", "-o", str(tmp_path / "missing" / "m.bin"))
    assert code == 1
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"SPMVCSR\0truncated")
    assert run("simulate", str(bad))[0] == 1


def simulate_json(*extra):
    code, text = run("simulate", "fd9:10", "--preset", "desk", *extra)
    assert code == 0
    return json.loads(text)


def test_simulate_conservation():
    doc = simulate_json()
    assert all(doc["conservation"].values())
    r = doc["result"]
    assert r["l2"]["demand_accesses"] == r["l1"]["demand_misses"]
    assert doc["counters"]["instructions"] == 10 * 9 * 1024 + 4 * 1024
    assert set(doc["metrics"]) == {"l2_miss_rate", "l3_miss_rate", "prefetch_miss_rate", "l2_stall_fraction"}


def test_simulate_no_l3():
    doc = simulate_json("--no-l3")
    assert all(v == 0 for v in doc["result"]["l3"].values())
    assert doc["config"]["l3_bypass"] is True


def test_simulate_no_prefetch_raises_misses():
    on, off = simulate_json(), simulate_json("--no-prefetch")
    assert off["result"]["l2"]["demand_misses"] > on["result"]["l2"]["demand_misses"]
    assert off["result"]["prefetch_issued"] == 0


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run("simulate", "rmat:9:4", "--preset", "desk", "--threads", "2", "-o", str(p))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(json.loads(a.read_text())["result"]["per_core"]) == 2


def test_simulate_config_file_and_matrix_file(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text(cachecfg.dumps(desk()))
    m = tmp_path / "m.bin"
    run("gen", "--kind", "fd9", "--scale", "10", "-o", str(m))
    code, text = run("simulate", str(m), "--config", str(ini))
    assert code == 0
    assert json.loads(text)["result"] == simulate_json()["result"]
    ini.write_text("[l1]\ncapacity = nope\n")
    assert run("simulate", str(m), "--config", str(ini))[0] == 2


def test_sweep_and_report(tmp_path):
    code, _ = run("sweep", "--kind", "rmat", "--scales", "8:14", "--threads", "1,2", "--runs", "2",
                  "--preset", "desk", "-o", str(tmp_path / "r"))
    assert code == 0
    doc = json.loads((tmp_path / "r.json").read_text())
    assert len(doc["records"]) == 7 * 2
    code, _ = run("sweep", "--kind", "fd9", "--scales", "8..9", "--threads", "1", "--runs", "2",
                  "--preset", "desk", "-o", str(tmp_path / "f"))
    assert code == 0
    code, _ = run("report", str(tmp_path / "r.json"), str(tmp_path / "f.csv"), "-o", str(tmp_path / "m"))
    assert code == 0
    rows = json.loads((tmp_path / "m.json").read_text())["records"]
    keys = [(r["kind"], r["nnz"], r["threads"]) for r in rows]
    assert keys == sorted(keys) and len(keys) == 16
    assert (tmp_path / "m_plot" / "gflops.fd9.csv").exists()


def test_report_refuses_mixed_configs(tmp_path):
    run("sweep", "--kind", "fd9", "--scales", "8", "--threads", "1", "--runs", "1", "--preset", "desk",
        "-o", str(tmp_path / "a"))
    run("sweep", "--kind", "fd9", "--scales", "8", "--threads", "1", "--runs", "1", "--preset", "desk",
        "--no-prefetch", "-o", str(tmp_path / "b"))
    inputs = [str(tmp_path / "a.json"), str(tmp_path / "b.json")]
    assert run("report", *inputs, "-o", str(tmp_path / "m"))[0] == 2
    assert not (tmp_path / "m.json").exists()
    assert run("report", *inputs, "-o", str(tmp_path / "m"), "--force")[0] == 0


def test_bench_command(tmp_path):
    code, text = run("bench", "fd9:8", "--threads", "1,2", "--runs", "3", "--preset", "desk",
                     "-o", str(tmp_path / "b"))
    assert code == 0 and text.count("GFLOPS") == 2
    assert (tmp_path / "b.csv").exists()


def test_bench_hardware_unavailable_exits_1(monkeypatch):
    def refuse(ptype, config):
        raise OSError(13, "Permission denied")

    monkeypatch.setattr(hardware, "_perf_event_open", refuse)
    assert run("bench", "fd9:8", "--threads", "1", "--runs", "1", "--provider", "hardware")[0] == 1


def test_provider_env_var(monkeypatch):
    monkeypatch.setenv("SPMVLAB_PROVIDER", "bogus")
    assert run("bench", "fd9:8", "--threads", "1", "--runs", "1")[0] == 2
    monkeypatch.setenv("SPMVLAB_PROVIDER", "simulated")
    assert run("bench", "fd9:8", "--threads", "1", "--runs", "1", "--preset", "desk")[0] == 0
