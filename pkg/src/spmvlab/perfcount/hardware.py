"""Hardware counter provider over Linux perf_event_open(2).

Counters are opened on the calling thread with ``inherit`` set, so threads the
work unit spawns are counted and summed into the parent's totals.  Threads
that already exist when collection starts (a long-lived pool, say) are not
counted; work units should create their workers inside the measured region.
"""

from __future__ import annotations

import configparser
import ctypes
import errno
import fcntl
import os
import platform
import struct
import threading
from importlib import resources
from typing import Callable

from .metrics import RAW_FIELDS, RawCounters

PERF_TYPE_HARDWARE = 0
PERF_TYPE_RAW = 4
PERF_COUNT_HW_CPU_CYCLES = 0
PERF_COUNT_HW_INSTRUCTIONS = 1
PERF_COUNT_HW_CACHE_REFERENCES = 2
PERF_COUNT_HW_CACHE_MISSES = 3

PERF_FORMAT_TOTAL_TIME_ENABLED = 1
PERF_FORMAT_TOTAL_TIME_RUNNING = 2

_FLAG_DISABLED = 1 << 0
_FLAG_INHERIT = 1 << 1
_FLAG_EXCLUDE_KERNEL = 1 << 5
_FLAG_EXCLUDE_HV = 1 << 6

_IOC_ENABLE = 0x2400
_IOC_DISABLE = 0x2401
_IOC_RESET = 0x2403

_SYSCALL = {"x86_64": 298, "aarch64": 241, "ppc64le": 319, "s390x": 331}

_ATTR_SIZE = 112  # PERF_ATTR_SIZE_VER5

DEFAULT_EVENT_MAP_RESOURCE = "events_sandybridge.ini"

# Sandy/Ivy Bridge encodings of the symbolic names used by the default map.
KNOWN_EVENTS = {
    "MEM_LOAD_UOPS_RETIRED.L2_MISS": (PERF_TYPE_RAW, 0xD1 | 0x10 << 8),
    "MEM_LOAD_UOPS_RETIRED.LLC_MISS": (PERF_TYPE_RAW, 0xD1 | 0x20 << 8),
    "L2_RQSTS.PF_MISS": (PERF_TYPE_RAW, 0x24 | 0x80 << 8),
    "CYCLE_ACTIVITY.STALL_CYCLES_L2_PENDING": (PERF_TYPE_RAW, 0xA3 | 0x05 << 8 | 5 << 24),
    "INST_RETIRED.ANY": (PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS),
    "CPU_CLK_UNHALTED.THREAD": (PERF_TYPE_HARDWARE, PERF_COUNT_HW_CPU_CYCLES),
    "instructions": (PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS),
    "cycles": (PERF_TYPE_HARDWARE, PERF_COUNT_HW_CPU_CYCLES),
    "cache-references": (PERF_TYPE_HARDWARE, PERF_COUNT_HW_CACHE_REFERENCES),
    "cache-misses": (PERF_TYPE_HARDWARE, PERF_COUNT_HW_CACHE_MISSES),
}


class CapabilityError(RuntimeError):
    """The platform cannot provide a requested counter."""

    def __init__(self, message: str, event: str | None = None):
        super().__init__(message)
        self.event = event


class _Attr(ctypes.Structure):
    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),
        ("bp_type", ctypes.c_uint32),
        ("config1", ctypes.c_uint64),
        ("config2", ctypes.c_uint64),
        ("_rest", ctypes.c_uint8 * (_ATTR_SIZE - 64)),
    ]


def parse_event(text: str) -> tuple[int, int]:
    """Resolve a platform event string to (perf type, config)."""
    s = text.strip()
    if s in KNOWN_EVENTS:
        return KNOWN_EVENTS[s]
    try:
        if s.startswith("r") and len(s) > 1:
            return PERF_TYPE_RAW, int(s[1:], 16)
        if "=" in s:
            parts = dict(p.split("=", 1) for p in s.split(","))
            unknown = set(parts) - {"event", "umask", "cmask", "inv", "edge"}
            if unknown or "event" not in parts:
                raise ValueError
            cfg = int(parts["event"], 0) & 0xFF
            cfg |= (int(parts.get("umask", "0"), 0) & 0xFF) << 8
            cfg |= (int(parts.get("edge", "0"), 0) & 1) << 18
            cfg |= (int(parts.get("inv", "0"), 0) & 1) << 23
            cfg |= (int(parts.get("cmask", "0"), 0) & 0xFF) << 24
            return PERF_TYPE_RAW, cfg
    except ValueError:
        pass
    raise CapabilityError(f"unrecognised platform event {text!r}", event=text)


def parse_event_map(text: str) -> dict[str, str]:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_string(text)
    if not cp.has_section("events"):
        raise CapabilityError("event map has no [events] section")
    return dict(cp.items("events"))


def load_event_map(path=None) -> dict[str, str]:
    if path is None:
        text = resources.files("spmvlab.data").joinpath(DEFAULT_EVENT_MAP_RESOURCE).read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return parse_event_map(text)


def resolve_event_map(event_map: dict[str, str]) -> dict[str, tuple[int, int]]:
    """Check that every logical counter is mapped and parseable."""
    for name in RAW_FIELDS:
        if name not in event_map:
            raise CapabilityError(f"event map has no entry for {name}", event=name)
    return {name: parse_event(event_map[name]) for name in RAW_FIELDS}


_libc = None


def _perf_event_open(ptype: int, config: int) -> int:
    global _libc
    nr = _SYSCALL.get(platform.machine())
    if nr is None or not hasattr(fcntl, "ioctl"):
        raise OSError(errno.ENOSYS, "perf_event_open unavailable on this platform")
    if _libc is None:
        _libc = ctypes.CDLL(None, use_errno=True)
    attr = _Attr()
    attr.type = ptype
    attr.size = _ATTR_SIZE
    attr.config = config
    attr.read_format = PERF_FORMAT_TOTAL_TIME_ENABLED | PERF_FORMAT_TOTAL_TIME_RUNNING
    attr.flags = _FLAG_DISABLED | _FLAG_INHERIT | _FLAG_EXCLUDE_KERNEL | _FLAG_EXCLUDE_HV
    fd = _libc.syscall(nr, ctypes.byref(attr), 0, -1, -1, 0)
    if fd < 0:
        err = ctypes.get_errno()
        raise OSError(err, os.strerror(err))
    return fd


def _read_scaled(fd: int) -> int:
    value, enabled, running = struct.unpack("<QQQ", os.read(fd, 24))
    if running == 0:
        return 0
    if running < enabled:
        # the kernel multiplexed this counter; extrapolate to the full window
        return int(round(value * enabled / running))
    return value


_session = threading.local()


def collect_hardware(work: Callable[[], object], event_map: dict[str, str] | None = None) -> RawCounters:
    """Run ``work`` with the six counters enabled around it and return their totals."""
    if getattr(_session, "active", False):
        raise RuntimeError("a counter collection is already active on this thread")
    resolved = resolve_event_map(event_map if event_map is not None else load_event_map())
    _session.active = True
    fds: dict[str, int] = {}
    try:
        for name, (ptype, config) in resolved.items():
            try:
                fds[name] = _perf_event_open(ptype, config)
            except OSError as exc:
                platform_name = (event_map or load_event_map())[name]
                raise CapabilityError(
                    f"cannot open counter {name} ({platform_name}): {exc.strerror}", event=platform_name
                ) from None
        for fd in fds.values():
            fcntl.ioctl(fd, _IOC_RESET, 0)
        for fd in fds.values():
            fcntl.ioctl(fd, _IOC_ENABLE, 0)
        try:
            work()
        finally:
            for fd in fds.values():
                fcntl.ioctl(fd, _IOC_DISABLE, 0)
        values = {name: _read_scaled(fd) for name, fd in fds.items()}
    finally:
        for fd in fds.values():
            os.close(fd)
        _session.active = False
    # multiplexing extrapolation can push the stall estimate past the cycle count
    values["l2_stall_cycles"] = min(values["l2_stall_cycles"], values["total_cycles"])
    return RawCounters(**values)


def hardware_available(event_map: dict[str, str] | None = None) -> bool:
    try:
        collect_hardware(lambda: None, event_map)
    except CapabilityError:
        return False
    return True
