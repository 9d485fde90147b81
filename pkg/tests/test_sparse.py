import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spmvlab import sparse
from spmvlab.gen import GenSpec, Kind, ShapeError, TripletMatrix, generate
from spmvlab.sparse import (
    CsrMatrix,
    FormatError,
    element_count,
    from_binary,
    from_matrix_market,
    from_triplets,
    max_nnz_fitting,
    problem_bytes,
    row_blocks,
    spmv,
    spmv_parallel,
    to_binary,
    to_matrix_market,
    to_triplets,
)


def random_triplets(rng, n, ncols=None, density=0.3):
    ncols = ncols or n
    mask = rng.random((n, ncols)) < density
    r, c = np.nonzero(mask)
    order = rng.permutation(len(r))
    return TripletMatrix(n, ncols, r[order], c[order], rng.standard_normal(len(r))[order])


def dense_oracle(t: TripletMatrix, x):
    # brute force on Python floats, independent of the CSR path
    d = [[0.0] * t.ncols for _ in range(t.nrows)]
    for i, j, v in zip(t.rows.tolist(), t.cols.tolist(), t.values.tolist()):
        d[i][j] = v
    return np.array([sum(d[i][j] * x[j] for j in range(t.ncols)) for i in range(t.nrows)])


def test_from_triplets_2x2():
    a = from_triplets(TripletMatrix(2, 2, [1, 0], [1, 0], [3.0, 5.0]))
    assert a.rowptr.tolist() == [0, 1, 2]
    assert a.colidx.tolist() == [0, 1]
    assert a.values.tolist() == [5.0, 3.0]
    assert a.colidx.dtype == np.uint32 and a.values.dtype == np.float64


def test_empty_matrix():
    a = from_triplets(TripletMatrix(2, 2, [], []))
    assert a.rowptr.tolist() == [0, 0, 0]
    assert spmv(a, np.ones(2)).tolist() == [0.0, 0.0]


def test_round_trip_triplets():
    t = random_triplets(np.random.default_rng(1), 20)
    assert to_triplets(from_triplets(t)).entry_set() == t.entry_set()


def test_out_of_range_and_duplicates():
    with pytest.raises(ShapeError):
        from_triplets(TripletMatrix(2, 2, [0], [2]))
    with pytest.raises(ShapeError):
        from_triplets(TripletMatrix(2, 2, [0, 0], [1, 1]))


def test_validate_rejects_bad_csr():
    good = from_triplets(TripletMatrix(2, 3, [0, 0, 1], [0, 2, 1]))
    good.validate()
    bad = CsrMatrix(2, 3, good.rowptr, np.array([2, 0, 1], np.uint32), good.values)
    with pytest.raises(ValueError):
        bad.validate()


@pytest.mark.parametrize("n,m,want", [(2048, 18432, 38913), (1, 0, 2), (16, 144, 305)])
def test_element_count(n, m, want):
    a = CsrMatrix(n, n, np.zeros(n + 1, np.uint32), np.zeros(m, np.uint32), np.zeros(m))
    a.rowptr[-1] = m
    assert element_count(a) == want


def test_problem_bytes_examples():
    assert problem_bytes(2048, 18432) == 12 * 18432 + 20 * 2048 + 4 == 262_148
    assert problem_bytes(163_840, 1_474_560) == 20_971_524
    assert problem_bytes(0, 0) == 4


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 40), density=st.floats(0, 0.6), seed=st.integers(0, 1000))
def test_footprint_matches_array_sizes(n, density, seed):
    a = from_triplets(random_triplets(np.random.default_rng(seed), n, density=density))
    assert element_count(a) == len(a.rowptr) + len(a.colidx) + len(a.values)
    vectors = 2 * n * 8
    assert problem_bytes(a.nrows, a.nnz) == a.rowptr.size * 4 + a.colidx.nbytes + a.values.nbytes + vectors


def test_max_nnz_fitting_examples():
    assert max_nnz_fitting(256 * 1024, 8) == 18_078
    assert max_nnz_fitting(20 * 1024 * 1024, 8) == 1_446_311
    assert abs(max_nnz_fitting(256 * 1024, 9) - 18_432) <= 1
    assert abs(max_nnz_fitting(20 * 1024 * 1024, 9) - 1_474_560) <= 1


@settings(max_examples=100, deadline=None)
@given(size=st.integers(64, 2**26), r=st.integers(1, 16))
def test_max_nnz_fitting_is_tight(size, r):
    m = max_nnz_fitting(size, r)
    # the fitted problem (m nonzeros, m/r rows) fits; one more nonzero does not
    assert 12 * m + 20 * m / r + 4 <= size
    assert 12 * (m + 1) + 20 * (m + 1) / r + 4 > size


def test_spmv_identity():
    a = from_triplets(TripletMatrix(3, 3, [0, 1, 2], [0, 1, 2]))
    assert spmv(a, [1.0, 2.0, 3.0]).tolist() == [1.0, 2.0, 3.0]


def test_spmv_random_6x6():
    rng = np.random.default_rng(6)
    t = random_triplets(rng, 6, density=0.3)
    x = rng.standard_normal(6)
    np.testing.assert_allclose(spmv(from_triplets(t), x), dense_oracle(t, x), rtol=1e-12, atol=1e-300)


def test_spmv_dimension_mismatch():
    a = from_triplets(TripletMatrix(3, 4, [0], [3]))
    with pytest.raises(ShapeError):
        spmv(a, np.ones(3))
    with pytest.raises(ShapeError):
        spmv_parallel(a, np.ones(5), 2)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 64), density=st.floats(0, 0.5), seed=st.integers(0, 2**31))
def test_spmv_matches_dense_oracle(n, density, seed):
    rng = np.random.default_rng(seed)
    t = random_triplets(rng, n, density=density)
    x = rng.standard_normal(n)
    got = spmv(from_triplets(t), x)
    want = dense_oracle(t, x)
    scale = np.abs(want).max(initial=0.0) or 1.0
    assert np.max(np.abs(got - want), initial=0.0) <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 80), threads=st.integers(1, 20), seed=st.integers(0, 2**31))
def test_parallel_bitwise_equals_serial(n, threads, seed):
    rng = np.random.default_rng(seed)
    a = from_triplets(random_triplets(rng, n, density=0.3)) if n else from_triplets(TripletMatrix(0, 0, [], []))
    x = rng.standard_normal(n)
    assert spmv_parallel(a, x, threads).tobytes() == spmv(a, x).tobytes()


def test_parallel_rmat_scale10_t16():
    a = from_triplets(generate(GenSpec(Kind.RMAT, 10, seed=1, permute=True)))
    x = np.random.default_rng(0).standard_normal(a.ncols)
    assert spmv_parallel(a, x, 16).tobytes() == spmv(a, x).tobytes()


def test_parallel_more_threads_than_rows():
    assert row_blocks(5, 8) == [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 5), (5, 5), (5, 5)]
    a = from_triplets(TripletMatrix(5, 5, range(5), range(5), [1.0, 2, 3, 4, 5]))
    assert spmv_parallel(a, np.ones(5), 8).tolist() == [1.0, 2, 3, 4, 5]


def test_row_blocks_cover_rows():
    for n in (0, 1, 7, 64, 100):
        for t in (1, 2, 3, 16):
            blocks = row_blocks(n, t)
            assert len(blocks) == t
            assert blocks[0][0] == 0 and blocks[-1][1] == n
            assert all(b[1] == c[0] for b, c in zip(blocks, blocks[1:]))
            assert max(hi - lo for lo, hi in blocks) == -(-n // t)


def test_zero_threads_rejected():
    a = from_triplets(TripletMatrix(2, 2, [0], [0]))
    with pytest.raises(ValueError):
        spmv_parallel(a, np.ones(2), 0)


def test_reps_leave_result_unchanged():
    a = from_triplets(generate(GenSpec(Kind.RMAT, 8, seed=3)))
    x = np.linspace(-1, 1, a.ncols)
    assert spmv_parallel(a, x, 3, reps=7).tobytes() == spmv(a, x).tobytes()


def test_concurrent_calls_on_distinct_matrices():
    mats = [from_triplets(generate(GenSpec(Kind.RMAT, 9, seed=s))) for s in range(4)]
    want = [spmv(m, np.ones(m.ncols)) for m in mats]
    got = [None] * 4

    def work(i):
        for _ in range(20):
            got[i] = spmv_parallel(mats[i], np.ones(mats[i].ncols), 2)

    ts = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert all(g.tobytes() == w.tobytes() for g, w in zip(got, want))


def test_binary_round_trip_fd9():
    a = from_triplets(generate(GenSpec(Kind.FD9, 4)))
    b = from_binary(to_binary(a))
    assert a.bitwise_equal(b)


def test_binary_header_layout():
    a = from_triplets(TripletMatrix(2, 3, [0, 1], [2, 0], [1.5, -2.0]))
    data = to_binary(a)
    assert data[:8] == b"SPMVCSR\0"
    version, n, ncols, m = np.frombuffer(data[8:36], dtype="<u4", count=1)[0], *np.frombuffer(data[12:36], "<u8")
    assert (version, n, ncols, m) == (1, 2, 3, 2)
    body = data[36:]
    assert np.frombuffer(body[:12], "<u4").tolist() == [0, 1, 2]
    assert np.frombuffer(body[12:20], "<u4").tolist() == [2, 0]
    assert np.frombuffer(body[20:], "<f8").tolist() == [1.5, -2.0]


def test_binary_corruption():
    data = to_binary(from_triplets(generate(GenSpec(Kind.FD9, 4))))
    with pytest.raises(FormatError):
        from_binary(data[:-5])
    with pytest.raises(FormatError):
        from_binary(b"NOTACSR!" + data[8:])
    with pytest.raises(FormatError):
        from_binary(data[:20])
    bad = bytearray(data)
    colidx_at = 36 + 17 * 4
    bad[colidx_at : colidx_at + 4] = (10**6).to_bytes(4, "little")
    with pytest.raises(FormatError):
        from_binary(bytes(bad))


def test_matrix_market_round_trip():
    a = from_triplets(TripletMatrix(2, 2, [0, 1], [0, 1], [5.0, 3.0]))
    text = to_matrix_market(a)
    assert text.startswith(b"%%MatrixMarket")
    b = from_matrix_market(text)
    assert to_triplets(b).entry_set() == {(0, 0, 5.0), (1, 1, 3.0)}
    r = from_triplets(random_triplets(np.random.default_rng(3), 30, ncols=17))
    assert r.bitwise_equal(from_matrix_market(to_matrix_market(r)))


def test_matrix_market_garbage():
    with pytest.raises(FormatError):
        from_matrix_market(b"this is not matrix market\n")


def test_save_load_by_extension(tmp_path):
    a = from_triplets(generate(GenSpec(Kind.RMAT, 6, seed=2)))
    for name in ("m.bin", "m.mtx"):
        p = tmp_path / name
        sparse.save(a, p)
        assert a.bitwise_equal(sparse.load(p))
    assert (tmp_path / "m.mtx").read_bytes().startswith(b"%%MatrixMarket")
    assert (tmp_path / "m.bin").read_bytes().startswith(b"SPMVCSR")
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp")]


def test_load_truncated_file(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(to_binary(from_triplets(generate(GenSpec(Kind.FD9, 5))))[:-1])
    with pytest.raises(FormatError):
        sparse.load(p)


def test_scipy_agrees():
    a = from_triplets(generate(GenSpec(Kind.RMAT, 8, seed=9, permute=True)))
    x = np.random.default_rng(1).standard_normal(a.ncols)
    np.testing.assert_allclose(spmv(a, x), a.to_scipy() @ x, rtol=1e-12)
