"""Shared domain types, UTC hour conventions and pipeline configuration."""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

HOUR = 3600
DAY = 24 * HOUR


def hour_floor(t: int) -> int:
    """Largest multiple of 3600 that is <= ``t``."""
    return int(t) - int(t) % HOUR


class TargetingCriterion(str, enum.Enum):
    DEMOGRAPHIC = "demographic"
    CONTEXTUAL = "contextual"
    BEHAVIORAL = "behavioral"
    DAYPARTING = "dayparting"
    DEVICE = "device"
    SITE_LIST = "site_list"


class MediaChannel(str, enum.Enum):
    DISPLAY = "display"
    VIDEO = "video"
    MOBILE = "mobile"
    SOCIAL = "social"


class CampaignStatus(str, enum.Enum):
    ACTIVE = "active"
    PAUSED = "paused"
    STOPPED = "stopped"


@dataclass(frozen=True)
class CampaignRecord:
    id: str
    currency: str
    status: CampaignStatus
    start: int
    end: Optional[int]
    targeting: frozenset
    channel: MediaChannel

    def __post_init__(self):
        if not self.id:
            raise ValueError("campaign id must be non-empty")
        if not self.targeting:
            raise ValueError(f"campaign {self.id}: targeting must be non-empty")
        if self.start < 0:
            raise ValueError(f"campaign {self.id}: negative start")
        if self.end is not None and not self.start < self.end:
            raise ValueError(f"campaign {self.id}: start must precede end")
        object.__setattr__(self, "status", CampaignStatus(self.status))
        object.__setattr__(self, "channel", MediaChannel(self.channel))
        object.__setattr__(
            self, "targeting", frozenset(TargetingCriterion(t) for t in self.targeting)
        )


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RawSeries:
    """Timestamped samples of one metric; timestamps strictly increasing."""

    metric_name: str
    tags: tuple
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).copy()
        vs = np.asarray(self.values, dtype=float).copy()
        if ts.shape != vs.shape or ts.ndim != 1:
            raise ValueError("timestamps and values must be 1-d and equally long")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(vs)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "tags", tuple(tuple(kv) for kv in self.tags))
        object.__setattr__(self, "timestamps", _readonly(ts))
        object.__setattr__(self, "values", _readonly(vs))

    def __len__(self):
        return len(self.timestamps)


@dataclass(frozen=True, eq=False)
class HourlySeries:
    """One slot per UTC hour starting at ``start_hour``; NaN marks a gap.

    Trailing gaps are trimmed on construction.
    """

    start_hour: int
    values: np.ndarray

    def __post_init__(self):
        if self.start_hour % HOUR:
            raise ValueError(f"start_hour {self.start_hour} is not hour-aligned")
        vs = np.array(self.values, dtype=float)
        if vs.ndim != 1:
            raise ValueError("values must be 1-d")
        if np.any(np.isinf(vs)):
            raise ValueError("values must be finite or NaN")
        present = np.flatnonzero(~np.isnan(vs))
        vs = vs[: present[-1] + 1] if len(present) else vs[:0]
        object.__setattr__(self, "values", _readonly(vs))

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, HourlySeries):
            return NotImplemented
        return self.start_hour == other.start_hour and np.array_equal(
            self.values, other.values, equal_nan=True
        )

    @property
    def end_hour(self) -> int:
        """Exclusive end."""
        return self.start_hour + len(self.values) * HOUR

    def hours(self) -> np.ndarray:
        return self.start_hour + HOUR * np.arange(len(self.values), dtype=np.int64)

    def at(self, hour: int) -> Optional[float]:
        i, r = divmod(hour - self.start_hour, HOUR)
        if r or i < 0 or i >= len(self.values) or math.isnan(self.values[i]):
            return None
        return float(self.values[i])

    def window(self, start_hour: int, n: int) -> np.ndarray:
        """``n`` slots from ``start_hour``, NaN outside the stored range."""
        out = np.full(n, np.nan)
        offset = (start_hour - self.start_hour) // HOUR
        lo, hi = max(offset, 0), min(offset + n, len(self.values))
        if lo < hi:
            out[lo - offset : hi - offset] = self.values[lo:hi]
        return out

    @classmethod
    def from_optional(cls, start_hour: int, values: Iterable[Optional[float]]):
        return cls(start_hour, [np.nan if v is None else v for v in values])


@dataclass(frozen=True)
class PipelineConfig:
    l: int = 24
    p_values: tuple = (1, 7)
    delta: float = 0.8
    x: int = 2
    alpha: float = 0.99
    beta_max: float = 3.0
    shrink_window: int = 168
    training_len: int = 168
    min_duration_days: int = 7
    # detector and pipeline options beyond the core parameters
    sigma_floor: float = 1e-12
    beta_policy: str = "window"
    negative_test: str = "mean"
    detect_p: int = 7
    membership: str = "snapshot"

    def __post_init__(self):
        object.__setattr__(self, "p_values", tuple(int(p) for p in self.p_values))
        self.validate()

    def validate(self):
        problems = []
        if self.l <= 0:
            problems.append("l must be > 0")
        if not self.p_values or any(p <= 0 for p in self.p_values):
            problems.append("every p in p_values must be > 0")
        if not 0 < self.delta < 1:
            problems.append("delta must lie in (0, 1)")
        if self.x < 0:
            problems.append("x must be >= 0")
        if not 0 <= self.alpha <= 1:
            problems.append("alpha must lie in [0, 1]")
        if self.beta_max <= 0:
            problems.append("beta_max must be > 0")
        if self.shrink_window <= 0:
            problems.append("shrink_window must be > 0")
        if self.training_len <= 0:
            problems.append("training_len must be > 0")
        if self.min_duration_days < 0:
            problems.append("min_duration_days must be >= 0")
        if self.sigma_floor < 0:
            problems.append("sigma_floor must be >= 0")
        if self.beta_policy not in ("window", "literal"):
            problems.append("beta_policy must be 'window' or 'literal'")
        if self.negative_test not in ("mean", "zero"):
            problems.append("negative_test must be 'mean' or 'zero'")
        if self.detect_p <= 0:
            problems.append("detect_p must be > 0")
        if self.membership not in ("snapshot", "hourly"):
            problems.append("membership must be 'snapshot' or 'hourly'")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def max_p(self) -> int:
        return max(self.p_values)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(p) for p in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


class ConfigError(ValueError):
    pass


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from None
    return raw


def parse_config(text: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Parse flat ``key=value`` text; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw)
    base = base or PipelineConfig()
    return base.replace(**values)


def load_config(path) -> PipelineConfig:
    return parse_config(Path(path).read_text())
