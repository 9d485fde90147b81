from .config import CacheConfig, ConfigError, LevelConfig, PrefetchConfig, desk, preset, sandy_bridge
from .sim import COMPUTE_CYCLES_PER_NNZ, CoreResult, Hierarchy, LevelStats, SimResult, simulate, simulate_multicore
from .trace import AccessTrace, Layout, LayoutError, Stream, dump_trace, load_trace, trace_spmv

__all__ = [
    "AccessTrace",
    "CacheConfig",
    "COMPUTE_CYCLES_PER_NNZ",
    "ConfigError",
    "CoreResult",
    "Hierarchy",
    "Layout",
    "LayoutError",
    "LevelConfig",
    "LevelStats",
    "PrefetchConfig",
    "SimResult",
    "Stream",
    "desk",
    "dump_trace",
    "load_trace",
    "preset",
    "sandy_bridge",
    "simulate",
    "simulate_multicore",
    "trace_spmv",
]
