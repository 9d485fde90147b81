"""Counter provider backed by the cache simulator."""

from __future__ import annotations

from dataclasses import dataclass

from ..simcache.sim import SimResult
from .metrics import RawCounters


@dataclass(frozen=True)
class InstructionModel:
    """Retired-instruction estimate for one SpMV pass (the simulator runs no code)."""

    per_nnz: int = 10
    per_row: int = 4

    def instructions(self, nnz: int, nrows: int) -> int:
        return self.per_nnz * nnz + self.per_row * nrows


def simulated_counters(r: SimResult, model: InstructionModel = InstructionModel()) -> RawCounters:
    return RawCounters(
        l2_demand_misses=r.l2.demand_misses,
        l3_demand_misses=r.l3.demand_misses,
        prefetch_l2_misses=r.prefetch_l2_misses,
        l2_stall_cycles=r.stall_cycles,
        instructions=model.instructions(r.nnz, r.nrows),
        total_cycles=r.total_cycles,
    )
