"""Fully-associative LRU reference model, kept deliberately naive.

Each level is a Python list ordered most- to least-recently used.  No
prefetching, no write-back bookkeeping; only demand hits and misses.  Used as
an independent check on :mod:`spmvlab.simcache.sim`.
"""

from __future__ import annotations


class LruList:
    def __init__(self, capacity_lines: int):
        self.capacity = capacity_lines
        self.stack: list[int] = []
        self.hits = 0
        self.misses = 0

    def access(self, line: int) -> bool:
        if line in self.stack:
            self.stack.remove(line)
            self.stack.insert(0, line)
            self.hits += 1
            return True
        self.misses += 1
        self.stack.insert(0, line)
        if len(self.stack) > self.capacity:
            self.stack.pop()
        return False


def reference_misses(lines, capacity_lines: int) -> int:
    cache = LruList(capacity_lines)
    for line in lines:
        cache.access(line)
    return cache.misses


def reference_hierarchy(lines, capacities: tuple[int, ...], bypass_last: bool = False) -> list[tuple[int, int]]:
    """(hits, misses) per level for an inclusive-fill chain of LRU lists.

    A level is only consulted when every level above it missed.  With
    ``bypass_last`` the final level is never consulted.
    """
    levels = [LruList(c) for c in capacities]
    active = levels[:-1] if bypass_last else levels
    for line in lines:
        for lv in active:
            if lv.access(line):
                break
    return [(lv.hits, lv.misses) for lv in levels]
