"""CSR storage, the SpMV kernels, and storage/footprint arithmetic."""

from __future__ import annotations

import io
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
import scipy.io
import scipy.sparse

from .gen import ShapeError, TripletMatrix

VALUE_BYTES = 8
INDEX_BYTES = 4
INDEX_DTYPE = np.uint32

MAGIC = b"SPMVCSR\0"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQQQ")


class FormatError(ValueError):
    """Corrupt or truncated matrix file."""


@dataclass(eq=False)
class CsrMatrix:
    nrows: int
    ncols: int
    rowptr: np.ndarray
    colidx: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.nrows, self.ncols

    def validate(self):
        rp, ci = self.rowptr, self.colidx
        if len(rp) != self.nrows + 1:
            raise ShapeError("rowptr must have nrows + 1 entries")
        if len(ci) != len(self.values):
            raise ShapeError("colidx and values differ in length")
        if rp[0] != 0 or rp[-1] != len(ci):
            raise ShapeError("rowptr must start at 0 and end at nnz")
        if np.any(np.diff(rp.astype(np.int64)) < 0):
            raise ShapeError("rowptr must be nondecreasing")
        if len(ci) and int(ci.max()) >= self.ncols:
            raise ShapeError("column index out of range")
        if len(ci) > 1:
            step = np.diff(ci.astype(np.int64))
            row_start = np.zeros(len(ci), dtype=bool)
            row_start[rp[1:-1][rp[1:-1] < len(ci)].astype(np.int64)] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ShapeError("column indices must be strictly increasing within each row")

    def bitwise_equal(self, other: "CsrMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.rowptr, other.rowptr)
            and np.array_equal(self.colidx, other.colidx)
            and self.values.tobytes() == other.values.tobytes()
        )

    def row_degrees(self) -> np.ndarray:
        return np.diff(self.rowptr.astype(np.int64))

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def to_scipy(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.csr_matrix(
            (self.values, self.colidx.astype(np.int64), self.rowptr.astype(np.int64)), shape=self.shape
        )


def from_triplets(t: TripletMatrix) -> CsrMatrix:
    rows, cols = t.rows, t.cols
    if t.nnz and (rows.min() < 0 or rows.max() >= t.nrows or cols.min() < 0 or cols.max() >= t.ncols):
        raise ShapeError("triplet index out of range")
    if t.nnz >= 2**32 or t.ncols > 2**32:
        raise ShapeError("matrix exceeds 32-bit index width")
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    if t.nnz > 1 and np.any((rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])):
        raise ShapeError("duplicate (row, col) entries")
    rowptr = np.zeros(t.nrows + 1, dtype=INDEX_DTYPE)
    np.cumsum(np.bincount(rows, minlength=t.nrows), out=rowptr[1:])
    return CsrMatrix(t.nrows, t.ncols, rowptr, cols.astype(INDEX_DTYPE), t.values[order].copy())


def to_triplets(a: CsrMatrix) -> TripletMatrix:
    rows = np.repeat(np.arange(a.nrows, dtype=np.int64), a.row_degrees())
    return TripletMatrix(a.nrows, a.ncols, rows, a.colidx.astype(np.int64), a.values.copy())


def element_count(a: CsrMatrix) -> int:
    """Total elements in the three CSR arrays: 2m + n + 1."""
    return 2 * a.nnz + a.nrows + 1


def problem_bytes(n: int, m: int) -> int:
    """Bytes touched by one SpMV: CSR arrays plus x and y (12m + 20n + 4)."""
    return (VALUE_BYTES + INDEX_BYTES) * m + INDEX_BYTES * (n + 1) + 2 * VALUE_BYTES * n


def max_nnz_fitting(cache_bytes: int, nnz_per_row: int) -> int:
    """Largest nnz whose problem fits in ``cache_bytes`` at ``nnz_per_row`` nonzeros per row."""
    if cache_bytes <= 0 or nnz_per_row <= 0:
        raise ValueError("cache size and nnz_per_row must be positive")
    per_row = (VALUE_BYTES + INDEX_BYTES) * nnz_per_row + INDEX_BYTES + 2 * VALUE_BYTES
    return max(0, (cache_bytes - INDEX_BYTES) * nnz_per_row // per_row)


# Kernels.  One scalar accumulator per row, written to y once, so any row
# partition reproduces the serial result bit for bit.

@numba.njit(nogil=True, cache=True)
def _spmv_rows(rowptr, colidx, values, x, y, start, stop):
    for i in range(start, stop):
        acc = 0.0
        for k in range(rowptr[i], rowptr[i + 1]):
            acc += values[k] * x[colidx[k]]
        y[i] = acc


@numba.njit(nogil=True, cache=True)
def _spmv_rows_repeat(rowptr, colidx, values, x, y, start, stop, reps):
    for _ in range(reps):
        _spmv_rows(rowptr, colidx, values, x, y, start, stop)


def _check_vector(a: CsrMatrix, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) != a.ncols:
        raise ShapeError(f"x has length {len(x)}, matrix has {a.ncols} columns")
    return x


def spmv(a: CsrMatrix, x, out: np.ndarray | None = None) -> np.ndarray:
    x = _check_vector(a, x)
    y = np.empty(a.nrows) if out is None else out
    _spmv_rows(a.rowptr, a.colidx, a.values, x, y, 0, a.nrows)
    return y


def row_blocks(n: int, threads: int) -> list[tuple[int, int]]:
    """Contiguous blocks of ceil(n / threads) rows; trailing blocks may be empty."""
    if threads < 1:
        raise ValueError("thread count must be at least 1")
    size = -(-n // threads) if n else 0
    return [(min(t * size, n), min((t + 1) * size, n)) for t in range(threads)]


def spmv_parallel(a: CsrMatrix, x, threads: int, out: np.ndarray | None = None,
                  pool: ThreadPoolExecutor | None = None, reps: int = 1) -> np.ndarray:
    """Row-block parallel SpMV; bitwise equal to :func:`spmv`.

    ``reps`` repeats the product inside each worker without synchronising
    between repetitions (used by the benchmark harness).
    """
    blocks = row_blocks(a.nrows, threads)
    x = _check_vector(a, x)
    y = np.empty(a.nrows) if out is None else out
    args = (a.rowptr, a.colidx, a.values, x, y)
    if threads == 1:
        _spmv_rows_repeat(*args, 0, a.nrows, reps)
        return y
    own = pool is None
    if own:
        pool = ThreadPoolExecutor(max_workers=threads)
    try:
        futures = [pool.submit(_spmv_rows_repeat, *args, lo, hi, reps) for lo, hi in blocks if hi > lo]
        for f in futures:
            f.result()
    finally:
        if own:
            pool.shutdown()
    return y


# Serialization

def _write_atomic(path, data: bytes):
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_binary(a: CsrMatrix) -> bytes:
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, a.nrows, a.ncols, a.nnz),
        a.rowptr.astype("<u4").tobytes(),
        a.colidx.astype("<u4").tobytes(),
        a.values.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def from_binary(data: bytes) -> CsrMatrix:
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, n, ncols, m = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("bad magic; not a binary CSR file")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    expected = _HEADER.size + 4 * (n + 1) + 4 * m + 8 * m
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes, got {len(data)}")
    off = _HEADER.size
    rowptr = np.frombuffer(data, "<u4", n + 1, off).astype(INDEX_DTYPE)
    off += 4 * (n + 1)
    colidx = np.frombuffer(data, "<u4", m, off).astype(INDEX_DTYPE)
    off += 4 * m
    values = np.frombuffer(data, "<f8", m, off).astype(np.float64)
    a = CsrMatrix(int(n), int(ncols), rowptr, colidx, values)
    try:
        a.validate()
    except ShapeError as exc:
        raise FormatError(f"invalid CSR content: {exc}") from None
    return a


def to_matrix_market(a: CsrMatrix) -> bytes:
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, a.to_scipy().tocoo(), field="real", symmetry="general")
    return buf.getvalue()


def from_matrix_market(data: bytes) -> CsrMatrix:
    try:
        coo = scipy.io.mmread(io.BytesIO(data))
    except Exception as exc:
        raise FormatError(f"unreadable Matrix Market data: {exc}") from None
    if not scipy.sparse.issparse(coo):
        coo = scipy.sparse.coo_matrix(coo)
    coo = scipy.sparse.coo_matrix(coo)
    nrows, ncols = coo.shape
    try:
        return from_triplets(TripletMatrix(nrows, ncols, coo.row, coo.col, coo.data.astype(np.float64)))
    except ShapeError as exc:
        raise FormatError(str(exc)) from None


def _format_for(path, fmt: str | None) -> str:
    if fmt:
        return fmt
    return "mtx" if os.fspath(path).endswith(".mtx") else "bin"


def save(a: CsrMatrix, path, fmt: str | None = None):
    """Write by extension (``.mtx`` is Matrix Market, anything else binary)."""
    data = to_matrix_market(a) if _format_for(path, fmt) == "mtx" else to_binary(a)
    _write_atomic(path, data)


def load(path, fmt: str | None = None) -> CsrMatrix:
    with open(path, "rb") as fh:
        data = fh.read()
    return from_matrix_market(data) if _format_for(path, fmt) == "mtx" else from_binary(data)
