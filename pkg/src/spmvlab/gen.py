"""Seeded sparse matrix generators: R-MAT and the periodic 9-point stencil.

All randomness comes from ``numpy.random.Generator`` over the PCG64 bit
generator (``numpy.random.PCG64(seed)``).  Only ``Generator.random`` and
``Generator.permutation`` are used, so a fixed seed gives the same matrix on
every platform numpy supports.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

MIN_SCALE = 4
MAX_SCALE = 26
DEFAULT_RMAT_PROBS = (0.57, 0.19, 0.19, 0.05)


class SpecError(ValueError):
    """Invalid or infeasible generator specification."""


class ShapeError(ValueError):
    """Matrix shape or index range is wrong for the requested operation."""


class Kind(str, enum.Enum):
    RMAT = "rmat"
    FD9 = "fd9"


@dataclass(frozen=True)
class GenSpec:
    kind: Kind
    scale: int
    nnz_per_row: int | None = None
    rmat_probs: tuple[float, float, float, float] = DEFAULT_RMAT_PROBS
    seed: int = 0
    permute: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", Kind(self.kind))
        except ValueError:
            raise SpecError(f"unknown matrix kind {self.kind!r}") from None
        if self.nnz_per_row is None:
            object.__setattr__(self, "nnz_per_row", 8 if self.kind is Kind.RMAT else 9)
        self.validate()

    @property
    def n(self) -> int:
        return 1 << self.scale

    @property
    def nnz(self) -> int:
        return self.nnz_per_row * self.n

    def validate(self):
        if not isinstance(self.scale, (int, np.integer)) or not MIN_SCALE <= self.scale <= MAX_SCALE:
            raise SpecError(f"scale must be an integer in [{MIN_SCALE}, {MAX_SCALE}], got {self.scale!r}")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must be a 64-bit unsigned integer")
        if self.kind is Kind.FD9 and self.nnz_per_row != 9:
            raise SpecError("fd9 matrices have exactly 9 nonzeros per row")
        if self.nnz_per_row < 1:
            raise SpecError("nnz_per_row must be positive")
        probs = self.rmat_probs
        if len(probs) != 4 or any(not 0.0 <= p <= 1.0 for p in probs):
            raise SpecError(f"rmat_probs must be four values in [0, 1], got {probs!r}")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise SpecError(f"rmat_probs must sum to 1, got {sum(probs)!r}")

    def describe(self) -> str:
        return f"{self.kind.value}:s{self.scale}:seed{self.seed}" + (":perm" if self.permute else "")


@dataclass
class TripletMatrix:
    nrows: int
    ncols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        if self.values is None:
            self.values = np.ones(len(self.rows))
        self.values = np.asarray(self.values, dtype=np.float64)
        if not len(self.rows) == len(self.cols) == len(self.values):
            raise ShapeError("rows, cols and values must have equal length")

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def entry_set(self) -> set[tuple[int, int, float]]:
        return set(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def row_degrees(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.nrows)


@dataclass(frozen=True)
class Permutation:
    map: np.ndarray

    @property
    def n(self) -> int:
        return len(self.map)

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.map)
        inv[self.map] = np.arange(self.n)
        return Permutation(inv)

    def apply_to_vector(self, v: np.ndarray) -> np.ndarray:
        """Return w with w[map[i]] = v[i]."""
        w = np.empty_like(v)
        w[self.map] = v
        return w


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _rmat_edges(rng, scale: int, count: int, probs) -> tuple[np.ndarray, np.ndarray]:
    a, b, c, _ = probs
    rows = np.zeros(count, dtype=np.int64)
    cols = np.zeros(count, dtype=np.int64)
    t1, t2, t3 = a, a + b, a + b + c
    for level in range(scale):
        u = rng.random(count)
        # quadrants: a=(0,0) b=(0,1) c=(1,0) d=(1,1)
        row_bit = u >= t2
        col_bit = ((u >= t1) & (u < t2)) | (u >= t3)
        bit = np.int64(1) << (scale - 1 - level)
        rows |= row_bit * bit
        cols |= col_bit * bit
    return rows, cols


def gen_rmat(spec: GenSpec) -> TripletMatrix:
    """R-MAT matrix with exactly ``nnz_per_row * 2**scale`` distinct unit entries.

    Each edge picks one of four quadrants per recursion level.  Edges that
    collide with an already accepted (row, col) pair are thrown away and
    regenerated until the target count is reached; acceptance is first-come
    in generation order, which keeps the result a pure function of the seed.
    """
    if spec.kind is not Kind.RMAT:
        raise SpecError("gen_rmat needs kind=rmat")
    n, m = spec.n, spec.nnz
    if m > n * n:
        raise SpecError(f"infeasible density: {m} nonzeros requested in a {n}x{n} matrix")
    if m >= 2**32:
        raise SpecError("nnz exceeds the 32-bit index limit")
    rng = _rng(spec.seed)

    keys = np.empty(0, dtype=np.int64)
    while len(keys) < m:
        r, c = _rmat_edges(rng, spec.scale, m - len(keys), spec.rmat_probs)
        merged = np.concatenate([keys, r * n + c])
        _, first = np.unique(merged, return_index=True)
        keys = merged[np.sort(first)]
    rows, cols = np.divmod(keys, n)
    t = TripletMatrix(n, n, rows, cols)
    if spec.permute:
        t, _, _ = permute_random(t, spec.seed)
    return t


def fd9_grid(scale: int) -> tuple[int, int]:
    """Grid extents (gx, gy) with gx * gy == 2**scale; gx is the fast index."""
    return 1 << ((scale + 1) // 2), 1 << (scale // 2)


def gen_fd9(spec: GenSpec) -> TripletMatrix:
    """9-point stencil on a periodic gx-by-gy grid, row-major with x fastest."""
    if spec.kind is not Kind.FD9:
        raise SpecError("gen_fd9 needs kind=fd9")
    gx, gy = fd9_grid(spec.scale)
    n = gx * gy
    node = np.arange(n, dtype=np.int64)
    ix, iy = node % gx, node // gx
    cols = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            cols.append(((iy + dy) % gy) * gx + (ix + dx) % gx)
    cols = np.stack(cols, axis=1).ravel()
    rows = np.repeat(node, 9)
    t = TripletMatrix(n, n, rows, cols)
    if spec.permute:
        t, _, _ = permute_random(t, spec.seed)
    return t


def generate(spec: GenSpec) -> TripletMatrix:
    if spec.kind is Kind.RMAT:
        return gen_rmat(spec)
    return gen_fd9(spec)


def permute_random(t: TripletMatrix, seed: int) -> tuple[TripletMatrix, Permutation, Permutation]:
    """Relabel rows by P and columns by Q, both uniform and independent.

    Entry (i, j, v) moves to (P[i], Q[j], v).  The generator is seeded with
    ``seed + 1`` so permuting an R-MAT matrix built from the same seed does
    not reuse its random stream.
    """
    if t.nrows != t.ncols:
        raise ShapeError(f"permute_random needs a square matrix, got {t.nrows}x{t.ncols}")
    rng = _rng((seed + 1) % 2**64)
    p = Permutation(rng.permutation(t.nrows))
    q = Permutation(rng.permutation(t.ncols))
    out = TripletMatrix(t.nrows, t.ncols, p.map[t.rows], q.map[t.cols], t.values.copy())
    return out, p, q


def parse_spec(text: str) -> GenSpec:
    """Parse ``kind:scale[:seed[:perm|noperm]]``, e.g. ``rmat:14:7``.

    R-MAT matrices are permuted unless ``noperm`` is given; FD9 is left in
    natural order unless ``perm`` is given.
    """
    parts = text.split(":")
    if len(parts) < 2:
        raise SpecError(f"expected kind:scale[:seed[:perm]], got {text!r}")
    try:
        kind = Kind(parts[0].lower())
        scale = int(parts[1])
        seed = int(parts[2]) if len(parts) > 2 and parts[2] else 0
    except ValueError as exc:
        raise SpecError(f"bad matrix spec {text!r}: {exc}") from None
    flag = parts[3].lower() if len(parts) > 3 else ""
    if flag in ("perm", "permute"):
        permute = True
    elif flag in ("noperm", "nopermute"):
        permute = False
    elif flag == "":
        permute = kind is Kind.RMAT
    else:
        raise SpecError(f"bad permute flag {parts[3]!r} in {text!r}")
    if len(parts) > 4:
        raise SpecError(f"too many fields in {text!r}")
    return GenSpec(kind, scale, seed=seed, permute=permute)
