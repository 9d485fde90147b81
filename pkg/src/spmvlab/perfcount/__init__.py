from .hardware import CapabilityError, collect_hardware, hardware_available, load_event_map, parse_event, parse_event_map
from .metrics import (
    COLUMNS,
    METRIC_FIELDS,
    RAW_FIELDS,
    MetricError,
    MetricsRecord,
    RawCounters,
    gflops,
    l2_miss_rate,
    l2_stall_fraction,
    l3_miss_rate,
    prefetch_miss_rate,
    records_to_csv,
    records_to_json,
)
from .simulated import InstructionModel, simulated_counters

__all__ = [
    "COLUMNS",
    "METRIC_FIELDS",
    "RAW_FIELDS",
    "CapabilityError",
    "InstructionModel",
    "MetricError",
    "MetricsRecord",
    "RawCounters",
    "collect_hardware",
    "gflops",
    "hardware_available",
    "l2_miss_rate",
    "l2_stall_fraction",
    "l3_miss_rate",
    "load_event_map",
    "parse_event",
    "parse_event_map",
    "prefetch_miss_rate",
    "records_to_csv",
    "records_to_json",
    "simulated_counters",
]
