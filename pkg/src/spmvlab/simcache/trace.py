"""Memory access traces of one CSR SpMV pass."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from ..sparse import INDEX_BYTES, VALUE_BYTES, CsrMatrix, FormatError


class LayoutError(ValueError):
    pass


class Stream(enum.IntEnum):
    ROWPTR = 0
    COLIDX = 1
    VALUES = 2
    X = 3
    Y = 4


READ, WRITE = 0, 1


@dataclass(frozen=True)
class Layout:
    """Base byte addresses of the five arrays in a flat address space."""

    rowptr: int
    colidx: int
    values: int
    x: int
    y: int

    @classmethod
    def packed(cls, a: CsrMatrix, base: int = 1 << 20, align: int = 64) -> "Layout":
        """Regions back to back in rowptr, colidx, values, x, y order, each line aligned."""
        sizes = region_sizes(a)
        addrs = []
        cur = base
        for size in sizes:
            cur = -(-cur // align) * align
            addrs.append(cur)
            cur += size
        return cls(*addrs)

    def check(self, a: CsrMatrix, align: int = 64):
        spans = sorted(zip(self.bases(), region_sizes(a)))
        for base, _ in spans:
            if base % align:
                raise LayoutError(f"region base {base:#x} is not {align}-byte aligned")
        for (b0, s0), (b1, _) in zip(spans, spans[1:]):
            if b0 + s0 > b1:
                raise LayoutError(f"regions at {b0:#x} and {b1:#x} overlap")

    def bases(self) -> tuple[int, ...]:
        return self.rowptr, self.colidx, self.values, self.x, self.y


def region_sizes(a: CsrMatrix) -> tuple[int, ...]:
    return (
        INDEX_BYTES * (a.nrows + 1),
        INDEX_BYTES * a.nnz,
        VALUE_BYTES * a.nnz,
        VALUE_BYTES * a.ncols,
        VALUE_BYTES * a.nrows,
    )


@dataclass(eq=False)
class AccessTrace:
    addr: np.ndarray    # uint64 byte addresses
    kind: np.ndarray    # uint8, READ or WRITE
    stream: np.ndarray  # uint8, Stream tag
    nnz: int
    nrows: int

    def __len__(self) -> int:
        return len(self.addr)

    def equal(self, other: "AccessTrace") -> bool:
        return (
            self.nnz == other.nnz
            and self.nrows == other.nrows
            and np.array_equal(self.addr, other.addr)
            and np.array_equal(self.kind, other.kind)
            and np.array_equal(self.stream, other.stream)
        )

    @classmethod
    def from_lines(cls, lines, line_size: int = 64, kind=READ, stream=Stream.X) -> "AccessTrace":
        """Synthetic trace touching the given line numbers, one read each."""
        lines = np.asarray(lines, dtype=np.uint64)
        n = len(lines)
        return cls(
            lines * np.uint64(line_size),
            np.full(n, kind, dtype=np.uint8),
            np.full(n, stream, dtype=np.uint8),
            nnz=0,
            nrows=0,
        )

    def concat(self, other: "AccessTrace") -> "AccessTrace":
        return AccessTrace(
            np.concatenate([self.addr, other.addr]),
            np.concatenate([self.kind, other.kind]),
            np.concatenate([self.stream, other.stream]),
            self.nnz + other.nnz,
            self.nrows + other.nrows,
        )


def trace_spmv(a: CsrMatrix, layout: Layout | None = None, rows: tuple[int, int] | None = None) -> AccessTrace:
    """Trace of the serial CSR kernel over ``rows`` (default: all rows).

    Event order: rowptr[lo] once, then per row i: rowptr[i+1], then
    (colidx[k], values[k], x[colidx[k]]) for each nonzero k, then the
    y[i] store.
    """
    if layout is None:
        layout = Layout.packed(a)
    layout.check(a)
    lo, hi = rows if rows is not None else (0, a.nrows)
    if not 0 <= lo <= hi <= a.nrows:
        raise ValueError(f"row range {lo}:{hi} outside 0:{a.nrows}")
    rp = a.rowptr.astype(np.int64)
    counts = rp[lo + 1 : hi + 1] - rp[lo:hi]
    nrows = hi - lo
    k0, k1 = int(rp[lo]), int(rp[hi])
    nnz = k1 - k0
    total = 1 + 2 * nrows + 3 * nnz

    addr = np.empty(total, dtype=np.uint64)
    kind = np.zeros(total, dtype=np.uint8)
    stream = np.empty(total, dtype=np.uint8)

    seg = 2 + 3 * counts
    seg_start = np.empty(nrows, dtype=np.int64)
    if nrows:
        seg_start[0] = 1
        np.cumsum(seg[:-1], out=seg_start[1:])
        seg_start[1:] += 1

    addr[0] = layout.rowptr + INDEX_BYTES * lo
    stream[0] = Stream.ROWPTR

    row_ids = np.arange(lo, hi, dtype=np.int64)
    addr[seg_start] = layout.rowptr + INDEX_BYTES * (row_ids + 1)
    stream[seg_start] = Stream.ROWPTR

    ks = np.arange(k0, k1, dtype=np.int64)
    owner = np.repeat(np.arange(nrows, dtype=np.int64), counts)
    pos = seg_start[owner] + 1 + 3 * (ks - rp[lo:hi][owner])
    cols = a.colidx[k0:k1].astype(np.int64)
    addr[pos] = layout.colidx + INDEX_BYTES * ks
    stream[pos] = Stream.COLIDX
    addr[pos + 1] = layout.values + VALUE_BYTES * ks
    stream[pos + 1] = Stream.VALUES
    addr[pos + 2] = layout.x + VALUE_BYTES * cols
    stream[pos + 2] = Stream.X

    ypos = seg_start + 1 + 3 * counts
    addr[ypos] = layout.y + VALUE_BYTES * row_ids
    stream[ypos] = Stream.Y
    kind[ypos] = WRITE
    return AccessTrace(addr, kind, stream, nnz=nnz, nrows=nrows)


def expected_events(n: int, m: int) -> int:
    return 3 * m + (n + 1) + n


# Binary dump: header, then packed little-endian records (u64 addr, u8 kind, u8 stream).

_MAGIC = b"SPMVTRC\0"
_HEAD = struct.Struct("<8sIQQQ")
_RECORD = np.dtype([("addr", "<u8"), ("kind", "u1"), ("stream", "u1")])


def dump_trace(t: AccessTrace) -> bytes:
    rec = np.empty(len(t), dtype=_RECORD)
    rec["addr"], rec["kind"], rec["stream"] = t.addr, t.kind, t.stream
    return _HEAD.pack(_MAGIC, 1, len(t), t.nnz, t.nrows) + rec.tobytes()


def load_trace(data: bytes) -> AccessTrace:
    if len(data) < _HEAD.size:
        raise FormatError("truncated trace header")
    magic, version, count, nnz, nrows = _HEAD.unpack_from(data)
    if magic != _MAGIC or version != 1:
        raise FormatError("not a version-1 trace file")
    if len(data) != _HEAD.size + count * _RECORD.itemsize:
        raise FormatError("trace length does not match header")
    rec = np.frombuffer(data, _RECORD, count, _HEAD.size)
    if np.any(rec["kind"] > WRITE) or np.any(rec["stream"] > Stream.Y):
        raise FormatError("invalid event kind or stream tag")
    return AccessTrace(
        rec["addr"].astype(np.uint64), rec["kind"].copy(), rec["stream"].copy(), int(nnz), int(nrows)
    )
