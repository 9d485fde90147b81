"""Cache hierarchy parameters, presets, and the INI config file format.

Latencies are model constants (cycles), not measurements.  ``dram_latency``
is charged on top of the L3 lookup when L3 is probed and misses; under L3
bypass an L2 miss costs ``dram_latency`` alone.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LevelConfig:
    capacity: int
    associativity: int
    line_size: int = 64
    latency: int = 4

    @property
    def lines(self) -> int:
        return self.capacity // self.line_size

    @property
    def sets(self) -> int:
        return self.lines // self.associativity


@dataclass(frozen=True)
class PrefetchConfig:
    enabled: bool = True
    trigger: int = 2
    degree: int = 4
    window: int = 1000
    threshold: float = 0.5
    page_size: int = 4096
    streams: int = 32
    page_streams: int = 4


@dataclass(frozen=True)
class CacheConfig:
    l1: LevelConfig
    l2: LevelConfig
    l3: LevelConfig
    dram_latency: int = 200
    prefetch: PrefetchConfig = field(default_factory=PrefetchConfig)
    l3_bypass: bool = False
    cores: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def line_size(self) -> int:
        return self.l1.line_size

    def validate(self):
        levels = (self.l1, self.l2, self.l3)
        for name, lv in zip(("l1", "l2", "l3"), levels):
            if lv.line_size <= 0 or lv.line_size & (lv.line_size - 1):
                raise ConfigError(f"{name}: line size must be a power of two")
            if lv.associativity < 1 or lv.capacity < lv.line_size:
                raise ConfigError(f"{name}: capacity and associativity must be positive")
            if lv.capacity % (lv.line_size * lv.associativity):
                raise ConfigError(f"{name}: capacity must be a multiple of line_size * associativity")
        if len({lv.line_size for lv in levels}) != 1:
            raise ConfigError("all levels must share one line size")
        if not self.l1.capacity <= self.l2.capacity <= self.l3.capacity:
            raise ConfigError("capacities must be nondecreasing from L1 to L3")
        pf = self.prefetch
        if not 0.0 < pf.threshold <= 1.0:
            raise ConfigError("prefetch threshold must be in (0, 1]")
        if pf.trigger < 1 or pf.degree < 0 or pf.window < 1 or pf.streams < 1 or pf.page_streams < 1:
            raise ConfigError("prefetch trigger, window and streams must be >= 1, degree >= 0")
        if pf.page_size % self.l1.line_size:
            raise ConfigError("prefetch page size must be a multiple of the line size")
        if self.cores < 1:
            raise ConfigError("cores must be >= 1")

    def replace(self, **changes) -> "CacheConfig":
        return dataclasses.replace(self, **changes)

    def without_prefetch(self) -> "CacheConfig":
        return self.replace(prefetch=dataclasses.replace(self.prefetch, enabled=False))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "CacheConfig":
        return cls(
            l1=LevelConfig(**d["l1"]),
            l2=LevelConfig(**d["l2"]),
            l3=LevelConfig(**d["l3"]),
            dram_latency=d.get("dram_latency", 200),
            prefetch=PrefetchConfig(**d.get("prefetch", {})),
            l3_bypass=d.get("l3_bypass", False),
            cores=d.get("cores", 1),
        )


def sandy_bridge() -> CacheConfig:
    """Xeon E5-2690-like per-socket hierarchy: 32KB/256KB private, 20MB shared."""
    return CacheConfig(
        l1=LevelConfig(32 * 1024, 8, 64, 4),
        l2=LevelConfig(256 * 1024, 8, 64, 12),
        l3=LevelConfig(20 * 1024 * 1024, 20, 64, 30),
    )


def desk() -> CacheConfig:
    """Scaled-down hierarchy so capacity cliffs appear at scales a test can afford."""
    return CacheConfig(
        l1=LevelConfig(2 * 1024, 8, 64, 4),
        l2=LevelConfig(8 * 1024, 8, 64, 12),
        l3=LevelConfig(64 * 1024, 16, 64, 30),
    )


PRESETS = {"sandybridge": sandy_bridge, "desk": desk}


def preset(name: str) -> CacheConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# INI format:
#   [system] preset?, dram_latency, l3_bypass, cores
#   [l1] [l2] [l3] capacity, associativity, line_size, latency
#   [prefetch] enabled, trigger, degree, window, threshold, page_size, streams, page_streams

def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        return type(like)(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r}") from None


def loads(text: str) -> CacheConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    base = preset(cp.get("system", "preset", fallback="desk")).to_dict()
    for section, values in cp.items():
        if section == "DEFAULT":
            continue
        target = base if section == "system" else base.get(section)
        if not isinstance(target, dict):
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in values.items():
            if section == "system" and key == "preset":
                continue
            if key not in target or isinstance(target[key], dict):
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            target[key] = _coerce(raw, target[key])
    return CacheConfig.from_dict(base)


def dumps(cfg: CacheConfig) -> str:
    cp = configparser.ConfigParser()
    d = cfg.to_dict()
    cp["system"] = {k: str(d[k]) for k in ("dram_latency", "l3_bypass", "cores")}
    for name in ("l1", "l2", "l3", "prefetch"):
        cp[name] = {k: str(v) for k, v in d[name].items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_file(path) -> CacheConfig:
    with open(path) as fh:
        return loads(fh.read())
