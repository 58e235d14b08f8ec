"""Put-line wire format and an append-only, file-backed series store.

Line grammar (single spaces, no trailing whitespace)::

    put <metric> <unix-seconds> <value> [<tagk>=<tagv> ...]
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional
from urllib.parse import quote

import numpy as np

from .core import HOUR, RawSeries


class PutLineError(ValueError):
    """Base for every put-line encode/parse failure."""


class EncodeError(PutLineError):
    pass


class OpcodeError(PutLineError):
    pass


class MissingFieldError(PutLineError):
    pass


class TimestampError(PutLineError):
    pass


class ValueParseError(PutLineError):
    pass


class TagFormatError(PutLineError):
    pass


class DuplicateTagError(PutLineError):
    pass


class StoreError(OSError):
    pass


_TS_RE = re.compile(r"\d+")
_NUM_RE = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?")
_WS = re.compile(r"\s")


@dataclass(frozen=True)
class PutLine:
    metric: str
    timestamp: int
    value: float
    tags: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple((str(k), str(v)) for k, v in self.tags))


def format_value(v: float) -> str:
    """Shortest round-trip decimal; integral values carry no fractional part."""
    if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
        raise EncodeError(f"value must be a number, got {v!r}")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if not math.isfinite(v):
        raise EncodeError(f"value must be finite, got {v!r}")
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _check_token(kind: str, s: str):
    if not s or _WS.search(s):
        raise EncodeError(f"{kind} must be non-empty without whitespace: {s!r}")


def encode_put(p: PutLine) -> str:
    _check_token("metric", p.metric)
    if isinstance(p.timestamp, bool) or not isinstance(p.timestamp, (int, np.integer)) or p.timestamp < 0:
        raise EncodeError(f"timestamp must be a non-negative integer, got {p.timestamp!r}")
    parts = ["put", p.metric, str(int(p.timestamp)), format_value(p.value)]
    seen = set()
    for k, v in p.tags:
        _check_token("tag key", k)
        _check_token("tag value", v)
        if "=" in k:
            raise EncodeError(f"tag key may not contain '=': {k!r}")
        if k in seen:
            raise EncodeError(f"duplicate tag key {k!r}")
        seen.add(k)
        parts.append(f"{k}={v}")
    return " ".join(parts)


def parse_put(line: str) -> PutLine:
    if line.endswith("\n"):
        line = line[:-1]
        if line.endswith("\r"):
            line = line[:-1]
    fields = line.split(" ")
    if not fields or fields[0] != "put":
        raise OpcodeError(f"expected 'put', got {fields[0]!r}")
    if len(fields) < 4:
        raise MissingFieldError(f"put line needs metric, timestamp and value: {line!r}")
    _, metric, ts, value, *tags = fields
    if not metric or _WS.search(metric):
        raise MissingFieldError(f"bad or empty metric field in {line!r}")
    if not _TS_RE.fullmatch(ts):
        raise TimestampError(f"malformed timestamp {ts!r}")
    if not _NUM_RE.fullmatch(value):
        raise ValueParseError(f"malformed value {value!r}")
    parsed = []
    seen = set()
    for tok in tags:
        k, sep, v = tok.partition("=")
        if not sep or not k or not v or _WS.search(tok):
            raise TagFormatError(f"malformed tag {tok!r}")
        if k in seen:
            raise DuplicateTagError(f"duplicate tag key {k!r}")
        seen.add(k)
        parsed.append((k, v))
    fv = float(value)
    if not math.isfinite(fv):
        raise ValueParseError(f"value out of range {value!r}")
    return PutLine(metric, int(ts), fv, tuple(parsed))


def canonical_tags(tags) -> str:
    return ",".join(f"{k}={v}" for k, v in sorted(tags))


def series_key(metric: str, tags) -> str:
    return f"{metric}{{{canonical_tags(tags)}}}"


class SeriesStore:
    """One append-only put-line file per (metric, sorted tag set) key under ``root``.

    Reads replay the file so the last write for a timestamp wins.
    """

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, metric: str, tags) -> Path:
        return self.root / (quote(series_key(metric, tags), safe="") + ".put")

    def _open(self, path: Path, mode: str):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            return path.open(mode, encoding="utf-8")
        except OSError as e:
            raise StoreError(f"{path}: {e.strerror or e}") from e

    def append(self, p: PutLine):
        self.append_many([p])

    def append_many(self, lines: Iterable[PutLine]):
        """Append lines, grouping by key file; order within a key is preserved."""
        groups = {}
        paths = {}
        for p in lines:
            key = (p.metric, p.tags)
            path = paths.get(key)
            if path is None:
                path = paths[key] = self.path_for(p.metric, p.tags)
            groups.setdefault(path, []).append(encode_put(p) + "\n")
        for path, text in groups.items():
            with self._open(path, "a") as f:
                f.write("".join(text))

    def keys(self) -> list:
        """(metric, tags) for every stored key, sorted by file name."""
        if not self.root.is_dir():
            return []
        out = []
        for path in sorted(self.root.glob("*.put")):
            with self._open(path, "r") as f:
                first = f.readline()
            if first:
                p = parse_put(first)
                out.append((p.metric, tuple(sorted(p.tags))))
        return out

    def read(self, metric: str, tags=(), hour_range: Optional[tuple] = None) -> RawSeries:
        """Deduplicated samples; ``hour_range`` is ``[start_hour, end_hour)`` on hour buckets."""
        path = self.path_for(metric, tags)
        latest = {}
        if path.exists():
            with self._open(path, "r") as f:
                for lineno, line in enumerate(f, 1):
                    if not line.strip():
                        continue
                    try:
                        p = parse_put(line)
                    except PutLineError as e:
                        raise StoreError(f"{path}:{lineno}: {e}") from e
                    latest[p.timestamp] = p.value
        ts = np.array(sorted(latest), dtype=np.int64)
        vs = np.array([latest[t] for t in ts.tolist()], dtype=float)
        if hour_range is not None:
            lo, hi = hour_range
            hb = ts - ts % HOUR
            keep = (hb >= lo) & (hb < hi)
            ts, vs = ts[keep], vs[keep]
        return RawSeries(metric, tuple(tags), ts, vs)
