"""Trace-driven simulation of private L1D/L2 per core, a shared L3, and DRAM.

Model summary:

* true LRU in every set, write-allocate, write-back;
* a demand miss probes the next level; lines fetched from DRAM are filled
  into every level on the way up (L3 is skipped under ``l3_bypass``);
* write-backs mark the line dirty one level down if it is resident there,
  without touching that level's LRU order;
* one next-line streamer per core sits at L2.  It trains on L2 demand misses
  and on first demand hits to prefetched lines.  Streams are tracked per
  4KB page (up to ``page_streams`` per page, ``streams`` pages, both LRU).
  After ``trigger`` consecutive ascending lines in a stream it fills the
  next ``degree`` lines of that page into L2 (and L3 when they came from
  DRAM), at MRU;
* the streamer is held off while more than ``threshold`` of the last
  ``window`` L2 demand accesses (all cores) went to DRAM.  The check only
  applies once ``window`` accesses have been seen;
* stall cycles: each L2 demand miss costs its service latency minus the L2
  hit latency.  Total cycles add 2 compute cycles per nonzero.

The event loop is compiled with numba; cache sets are (tag, stamp, flags)
arrays where the smallest stamp in a set is the LRU way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .config import CacheConfig, ConfigError
from .trace import WRITE, AccessTrace, Stream

COMPUTE_CYCLES_PER_NNZ = 2

_DIRTY = 1
_PREFETCHED = 2

# per-core counter columns
C_L1_HIT, C_L1_MISS, C_L1_WB = 0, 1, 2
C_L2_HIT, C_L2_MISS, C_L2_PF_FILL, C_L2_PF_HIT, C_L2_WB = 3, 4, 5, 6, 7
C_STALL = 8
C_STREAM_ACC = 9   # 5 columns, indexed by Stream
C_STREAM_MISS = 14  # 5 columns
C_STREAM_L3_MISS = 19  # 5 columns
N_CORE_COUNTERS = 24

# shared counter slots
G_L3_HIT, G_L3_MISS, G_L3_PF_FILL, G_L3_WB = 0, 1, 2, 3
G_DRAM_DEMAND, G_DRAM_PF, G_DRAM_WB = 4, 5, 6
G_PF_ISSUED, G_PF_SUPPRESSED = 7, 8
N_GLOBAL_COUNTERS = 9


@dataclass
class LevelStats:
    demand_hits: int = 0
    demand_misses: int = 0
    prefetch_fills: int = 0
    prefetch_hits: int = 0
    writebacks: int = 0

    @property
    def demand_accesses(self) -> int:
        return self.demand_hits + self.demand_misses

    @property
    def miss_ratio(self) -> float:
        n = self.demand_accesses
        return self.demand_misses / n if n else 0.0

    def add(self, other: "LevelStats"):
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def to_dict(self) -> dict:
        return {
            "demand_hits": self.demand_hits,
            "demand_misses": self.demand_misses,
            "demand_accesses": self.demand_accesses,
            "prefetch_fills": self.prefetch_fills,
            "prefetch_hits": self.prefetch_hits,
            "writebacks": self.writebacks,
        }


@dataclass
class CoreResult:
    l1: LevelStats = field(default_factory=LevelStats)
    l2: LevelStats = field(default_factory=LevelStats)
    stall_cycles: int = 0
    nnz: int = 0
    nrows: int = 0
    l2_stream_accesses: list = field(default_factory=lambda: [0] * len(Stream))
    l2_stream_misses: list = field(default_factory=lambda: [0] * len(Stream))
    l3_stream_misses: list = field(default_factory=lambda: [0] * len(Stream))

    @property
    def compute_cycles(self) -> int:
        return COMPUTE_CYCLES_PER_NNZ * self.nnz


@dataclass
class SimResult:
    l1: LevelStats
    l2: LevelStats
    l3: LevelStats
    dram_demand: int
    dram_prefetch: int
    dram_writebacks: int
    prefetch_issued: int
    prefetch_suppressed: int
    stall_cycles: int
    compute_cycles: int
    nnz: int
    nrows: int
    events: int
    per_core: list[CoreResult]
    l2_stream_accesses: dict[str, int]
    l2_stream_misses: dict[str, int]
    l3_stream_misses: dict[str, int]

    @property
    def total_cycles(self) -> int:
        return self.compute_cycles + self.stall_cycles

    @property
    def prefetch_l2_misses(self) -> int:
        # Only lines absent from L2 are ever requested, so every issued
        # prefetch is fetched from beyond L2.
        return self.prefetch_issued

    def stream_miss_ratio(self, stream: Stream) -> float:
        acc = self.l2_stream_accesses[stream.name.lower()]
        return self.l2_stream_misses[stream.name.lower()] / acc if acc else 0.0

    def l3_stream_miss_ratio(self, stream: Stream) -> float:
        # L3 demand probes of a stream are exactly its L2 demand misses
        acc = self.l2_stream_misses[stream.name.lower()]
        return self.l3_stream_misses[stream.name.lower()] / acc if acc else 0.0

    def to_dict(self) -> dict:
        return {
            "l1": self.l1.to_dict(),
            "l2": self.l2.to_dict(),
            "l3": self.l3.to_dict(),
            "dram_demand": self.dram_demand,
            "dram_prefetch": self.dram_prefetch,
            "dram_writebacks": self.dram_writebacks,
            "prefetch_issued": self.prefetch_issued,
            "prefetch_l2_misses": self.prefetch_l2_misses,
            "prefetch_suppressed": self.prefetch_suppressed,
            "stall_cycles": self.stall_cycles,
            "compute_cycles": self.compute_cycles,
            "total_cycles": self.total_cycles,
            "nnz": self.nnz,
            "nrows": self.nrows,
            "events": self.events,
            "l2_stream_accesses": dict(self.l2_stream_accesses),
            "l2_stream_misses": dict(self.l2_stream_misses),
            "l3_stream_misses": dict(self.l3_stream_misses),
            "per_core": [
                {"l1": c.l1.to_dict(), "l2": c.l2.to_dict(), "stall_cycles": c.stall_cycles, "nnz": c.nnz}
                for c in self.per_core
            ],
        }


# -- compiled engine ---------------------------------------------------------

@numba.njit(cache=True)
def _find(tags, line):
    for w in range(tags.shape[0]):
        if tags[w] == line:
            return w
    return -1


@numba.njit(cache=True)
def _victim(stamps):
    # empty ways carry stamp -1, so they are taken first
    best = 0
    for w in range(1, stamps.shape[0]):
        if stamps[w] < stamps[best]:
            best = w
    return best


@numba.njit(cache=True)
def _tick(clock):
    clock[0] += 1
    return clock[0]


@numba.njit(cache=True)
def _fetch_below_l2(line, demand, bypass, l3_tag, l3_stamp, l3_flag, clock, g):
    """Bring a line from L3 or DRAM; True when DRAM served it."""
    if bypass:
        return True
    s = line % l3_tag.shape[0]
    w = _find(l3_tag[s], line)
    if w >= 0:
        l3_stamp[s, w] = _tick(clock)
        if demand:
            g[G_L3_HIT] += 1
        return False
    if demand:
        g[G_L3_MISS] += 1
    else:
        g[G_L3_PF_FILL] += 1
    v = _victim(l3_stamp[s])
    if l3_tag[s, v] >= 0 and l3_flag[s, v] & _DIRTY:
        g[G_L3_WB] += 1
        g[G_DRAM_WB] += 1
    l3_tag[s, v] = line
    l3_stamp[s, v] = _tick(clock)
    l3_flag[s, v] = 0
    return True


@numba.njit(cache=True)
def _l2_insert(c, line, flags, bypass, l2_tag, l2_stamp, l2_flag, l3_tag, l3_flag, clock, cs, g):
    s = line % l2_tag.shape[1]
    v = _victim(l2_stamp[c, s])
    old = l2_tag[c, s, v]
    if old >= 0 and l2_flag[c, s, v] & _DIRTY:
        cs[c, C_L2_WB] += 1
        marked = False
        if not bypass:
            s3 = old % l3_tag.shape[0]
            w3 = _find(l3_tag[s3], old)
            if w3 >= 0:
                l3_flag[s3, w3] |= _DIRTY
                marked = True
        if not marked:
            g[G_DRAM_WB] += 1
    l2_tag[c, s, v] = line
    l2_stamp[c, s, v] = _tick(clock)
    l2_flag[c, s, v] = flags


@numba.njit(cache=True)
def _train(c, line, p, l2_tag, l2_stamp, l2_flag, l3_tag, l3_stamp, l3_flag,
           pg_id, pg_stamp, st_last, st_streak, st_n, win_meta, clock, cs, g):
    lines_per_page, trigger, degree, enabled, threshold, bypass, wmax = p
    page = line // lines_per_page
    npages = pg_id.shape[1]
    slot = -1
    for k in range(npages):
        if pg_id[c, k] == page:
            slot = k
            break
    if slot < 0:
        slot = _victim(pg_stamp[c])
        pg_id[c, slot] = page
        st_n[c, slot] = 0
    pg_stamp[c, slot] = _tick(clock)

    n = st_n[c, slot]
    streak = 0
    for k in range(n):
        last = st_last[c, slot, k]
        if last == line - 1:
            st_last[c, slot, k] = line
            st_streak[c, slot, k] += 1
            streak = st_streak[c, slot, k]
            break
        if last == line:
            return
    if streak == 0:
        if n == st_last.shape[2]:
            for k in range(n - 1):
                st_last[c, slot, k] = st_last[c, slot, k + 1]
                st_streak[c, slot, k] = st_streak[c, slot, k + 1]
            n -= 1
        st_last[c, slot, n] = line
        st_streak[c, slot, n] = 1
        st_n[c, slot] = n + 1
        streak = 1

    if streak < trigger or not enabled:
        return
    if win_meta[1] == wmax and win_meta[2] > threshold * wmax:
        g[G_PF_SUPPRESSED] += 1
        return
    nsets2 = l2_tag.shape[1]
    for cand in range(line + 1, line + 1 + degree):
        if cand // lines_per_page != page:
            break
        if _find(l2_tag[c, cand % nsets2], cand) >= 0:
            continue
        if _fetch_below_l2(cand, False, bypass, l3_tag, l3_stamp, l3_flag, clock, g):
            g[G_DRAM_PF] += 1
        _l2_insert(c, cand, _PREFETCHED, bypass, l2_tag, l2_stamp, l2_flag, l3_tag, l3_flag, clock, cs, g)
        cs[c, C_L2_PF_FILL] += 1
        g[G_PF_ISSUED] += 1


@numba.njit(cache=True)
def _run(lines, writes, streams, core_ids,
         l1_tag, l1_stamp, l1_flag, l2_tag, l2_stamp, l2_flag, l3_tag, l3_stamp, l3_flag,
         pg_id, pg_stamp, st_last, st_streak, st_n, win, win_meta, clock, cs, g,
         p, l3_cost, dram_cost):
    bypass = p[5]
    wmax = p[6]
    nsets1 = l1_tag.shape[1]
    nsets2 = l2_tag.shape[1]
    for i in range(lines.shape[0]):
        line = lines[i]
        is_write = writes[i]
        stream = streams[i]
        c = core_ids[i]

        s1 = line % nsets1
        w1 = _find(l1_tag[c, s1], line)
        if w1 >= 0:
            l1_stamp[c, s1, w1] = _tick(clock)
            cs[c, C_L1_HIT] += 1
            if is_write:
                l1_flag[c, s1, w1] |= _DIRTY
            continue
        cs[c, C_L1_MISS] += 1

        s2 = line % nsets2
        cs[c, C_STREAM_ACC + stream] += 1
        w2 = _find(l2_tag[c, s2], line)
        dram = False
        if w2 >= 0:
            l2_stamp[c, s2, w2] = _tick(clock)
            cs[c, C_L2_HIT] += 1
            if l2_flag[c, s2, w2] & _PREFETCHED:
                l2_flag[c, s2, w2] &= ~_PREFETCHED
                cs[c, C_L2_PF_HIT] += 1
                _train(c, line, p, l2_tag, l2_stamp, l2_flag, l3_tag, l3_stamp, l3_flag,
                       pg_id, pg_stamp, st_last, st_streak, st_n, win_meta, clock, cs, g)
        else:
            cs[c, C_L2_MISS] += 1
            cs[c, C_STREAM_MISS + stream] += 1
            dram = _fetch_below_l2(line, True, bypass, l3_tag, l3_stamp, l3_flag, clock, g)
            if dram:
                g[G_DRAM_DEMAND] += 1
                cs[c, C_STALL] += dram_cost
                if not bypass:
                    cs[c, C_STREAM_L3_MISS + stream] += 1
            else:
                cs[c, C_STALL] += l3_cost
            _l2_insert(c, line, 0, bypass, l2_tag, l2_stamp, l2_flag, l3_tag, l3_flag, clock, cs, g)
            _train(c, line, p, l2_tag, l2_stamp, l2_flag, l3_tag, l3_stamp, l3_flag,
                   pg_id, pg_stamp, st_last, st_streak, st_n, win_meta, clock, cs, g)

        # congestion window: win_meta = (next slot, filled, dram count)
        pos = win_meta[0]
        if win_meta[1] == wmax:
            win_meta[2] -= win[pos]
        else:
            win_meta[1] += 1
        win[pos] = 1 if dram else 0
        win_meta[2] += win[pos]
        win_meta[0] = (pos + 1) % wmax

        v = _victim(l1_stamp[c, s1])
        old = l1_tag[c, s1, v]
        if old >= 0 and l1_flag[c, s1, v] & _DIRTY:
            cs[c, C_L1_WB] += 1
            so = old % nsets2
            wo = _find(l2_tag[c, so], old)
            if wo >= 0:
                l2_flag[c, so, wo] |= _DIRTY
        l1_tag[c, s1, v] = line
        l1_stamp[c, s1, v] = _tick(clock)
        l1_flag[c, s1, v] = _DIRTY if is_write else 0


class Hierarchy:
    """Mutable simulator state; feed it line streams with :meth:`run`."""

    def __init__(self, cfg: CacheConfig, cores: int = 1):
        self.cfg = cfg
        self.ncores = cores
        pf = cfg.prefetch

        def cache(level, lead):
            shape = lead + (level.sets, level.associativity)
            return np.full(shape, -1, np.int64), np.full(shape, -1, np.int64), np.zeros(shape, np.uint8)

        self.l1 = cache(cfg.l1, (cores,))
        self.l2 = cache(cfg.l2, (cores,))
        self.l3 = cache(cfg.l3, ())
        self.pg_id = np.full((cores, pf.streams), -1, np.int64)
        self.pg_stamp = np.full((cores, pf.streams), -1, np.int64)
        self.st_last = np.zeros((cores, pf.streams, pf.page_streams), np.int64)
        self.st_streak = np.zeros((cores, pf.streams, pf.page_streams), np.int64)
        self.st_n = np.zeros((cores, pf.streams), np.int64)
        self.win = np.zeros(pf.window, np.uint8)
        self.win_meta = np.zeros(3, np.int64)
        self.clock = np.zeros(1, np.int64)
        self.params = (
            pf.page_size // cfg.line_size,
            pf.trigger,
            pf.degree,
            pf.enabled,
            float(pf.threshold),
            cfg.l3_bypass,
            pf.window,
        )
        self.l3_cost = cfg.l3.latency - cfg.l2.latency
        self.dram_cost = (0 if cfg.l3_bypass else cfg.l3.latency) + cfg.dram_latency - cfg.l2.latency
        self.reset_stats()

    def reset_stats(self):
        self.cs = np.zeros((self.ncores, N_CORE_COUNTERS), np.int64)
        self.g = np.zeros(N_GLOBAL_COUNTERS, np.int64)
        self.events = 0

    def run(self, lines: np.ndarray, writes: np.ndarray, streams: np.ndarray, core_ids: np.ndarray | None = None):
        if core_ids is None:
            core_ids = np.zeros(len(lines), np.int64)
        _run(
            np.ascontiguousarray(lines, np.int64),
            np.ascontiguousarray(writes, np.bool_),
            np.ascontiguousarray(streams, np.int64),
            np.ascontiguousarray(core_ids, np.int64),
            *self.l1, *self.l2, *self.l3,
            self.pg_id, self.pg_stamp, self.st_last, self.st_streak, self.st_n,
            self.win, self.win_meta, self.clock, self.cs, self.g,
            self.params, self.l3_cost, self.dram_cost,
        )
        self.events += len(lines)

    def result(self, nnz=None, nrows=None) -> SimResult:
        names = [s.name.lower() for s in Stream]
        per_core = []
        for i, row in enumerate(self.cs.tolist()):
            per_core.append(
                CoreResult(
                    l1=LevelStats(row[C_L1_HIT], row[C_L1_MISS], 0, 0, row[C_L1_WB]),
                    l2=LevelStats(row[C_L2_HIT], row[C_L2_MISS], row[C_L2_PF_FILL], row[C_L2_PF_HIT], row[C_L2_WB]),
                    stall_cycles=row[C_STALL],
                    nnz=nnz[i] if nnz else 0,
                    nrows=nrows[i] if nrows else 0,
                    l2_stream_accesses=row[C_STREAM_ACC : C_STREAM_ACC + len(Stream)],
                    l2_stream_misses=row[C_STREAM_MISS : C_STREAM_MISS + len(Stream)],
                    l3_stream_misses=row[C_STREAM_L3_MISS : C_STREAM_L3_MISS + len(Stream)],
                )
            )
        l1, l2 = LevelStats(), LevelStats()
        for c in per_core:
            l1.add(c.l1)
            l2.add(c.l2)
        totals = self.cs.sum(axis=0).tolist()
        g = self.g.tolist()
        return SimResult(
            l1=l1,
            l2=l2,
            l3=LevelStats(g[G_L3_HIT], g[G_L3_MISS], g[G_L3_PF_FILL], 0, g[G_L3_WB]),
            dram_demand=g[G_DRAM_DEMAND],
            dram_prefetch=g[G_DRAM_PF],
            dram_writebacks=g[G_DRAM_WB],
            prefetch_issued=g[G_PF_ISSUED],
            prefetch_suppressed=g[G_PF_SUPPRESSED],
            stall_cycles=totals[C_STALL],
            compute_cycles=sum(c.compute_cycles for c in per_core),
            nnz=sum(c.nnz for c in per_core),
            nrows=sum(c.nrows for c in per_core),
            events=self.events,
            per_core=per_core,
            l2_stream_accesses=dict(zip(names, totals[C_STREAM_ACC : C_STREAM_ACC + len(Stream)])),
            l2_stream_misses=dict(zip(names, totals[C_STREAM_MISS : C_STREAM_MISS + len(Stream)])),
            l3_stream_misses=dict(zip(names, totals[C_STREAM_L3_MISS : C_STREAM_L3_MISS + len(Stream)])),
        )


def _line_arrays(trace: AccessTrace, line_size: int):
    shift = line_size.bit_length() - 1
    lines = (trace.addr >> np.uint64(shift)).astype(np.int64)
    return lines, trace.kind == WRITE, trace.stream.astype(np.int64)


def simulate(trace: AccessTrace, cfg: CacheConfig, warmup: int = 0) -> SimResult:
    """Single-core simulation.  ``warmup`` unmeasured passes run first."""
    return simulate_multicore([trace], cfg.replace(cores=1), warmup=warmup)


def simulate_multicore(traces: list[AccessTrace], cfg: CacheConfig, warmup: int = 0) -> SimResult:
    """One trace per core, interleaved round-robin one event at a time."""
    if len(traces) != cfg.cores:
        raise ConfigError(f"{len(traces)} traces for a {cfg.cores}-core configuration")
    h = Hierarchy(cfg, cores=cfg.cores)
    parts = [_line_arrays(t, cfg.line_size) for t in traces]
    if len(traces) == 1:
        lines, writes, streams = parts[0]
        core_ids = np.zeros(len(lines), np.int64)
    else:
        core_ids = np.concatenate([np.full(len(t), i, dtype=np.int64) for i, t in enumerate(traces)])
        step = np.concatenate([np.arange(len(t)) for t in traces])
        order = np.lexsort((core_ids, step))
        core_ids = core_ids[order]
        lines = np.concatenate([p[0] for p in parts])[order]
        writes = np.concatenate([p[1] for p in parts])[order]
        streams = np.concatenate([p[2] for p in parts])[order]
    for _ in range(warmup):
        h.run(lines, writes, streams, core_ids)
    h.reset_stats()
    h.run(lines, writes, streams, core_ids)
    return h.result(nnz=[t.nnz for t in traces], nrows=[t.nrows for t in traces])
