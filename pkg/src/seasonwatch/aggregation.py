"""Cluster aggregation, hourly downsampling and seasonal-difference change metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .core import HOUR, CampaignRecord, HourlySeries, MediaChannel, RawSeries, TargetingCriterion, _readonly

log = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class ClusterKey:
    kind: str  # "targeting" or "channel"
    name: str

    def __post_init__(self):
        if self.kind == "targeting":
            TargetingCriterion(self.name)
        elif self.kind == "channel":
            MediaChannel(self.name)
        else:
            raise ValueError(f"unknown cluster kind {self.kind!r}")

    @classmethod
    def targeting(cls, t) -> "ClusterKey":
        return cls("targeting", TargetingCriterion(t).value)

    @classmethod
    def channel(cls, ch) -> "ClusterKey":
        return cls("channel", MediaChannel(ch).value)

    @classmethod
    def parse(cls, text: str) -> "ClusterKey":
        kind, sep, name = text.strip().partition(":")
        if not sep:
            raise ValueError(f"cluster key must look like kind:name, got {text!r}")
        return cls(kind, name)

    def __str__(self):
        return f"{self.kind}:{self.name}"


ALL_CLUSTERS = tuple(
    [ClusterKey.targeting(t) for t in TargetingCriterion]
    + [ClusterKey.channel(ch) for ch in MediaChannel]
)


def clusters_of(c: CampaignRecord) -> frozenset:
    keys = {ClusterKey.targeting(t) for t in c.targeting}
    keys.add(ClusterKey.channel(c.channel))
    return frozenset(keys)


def downsample_hourly(raw: RawSeries) -> HourlySeries:
    """Sum raw samples into UTC hour buckets; empty hours become gaps."""
    if len(raw) == 0:
        return HourlySeries(0, [])
    buckets = raw.timestamps // HOUR
    first = int(buckets[0])
    idx = buckets - first
    sums = np.zeros(int(idx[-1]) + 1)
    np.add.at(sums, idx, raw.values)
    counts = np.bincount(idx, minlength=len(sums))
    sums[counts == 0] = np.nan
    return HourlySeries(first * HOUR, sums)


def _span(series: Iterable[HourlySeries]):
    series = [s for s in series if len(s)]
    if not series:
        return None
    return min(s.start_hour for s in series), max(s.end_hour for s in series)


def sum_series(series: Iterable[HourlySeries]) -> HourlySeries:
    """Slot-wise sum; a slot is a gap only when every input has a gap there."""
    series = list(series)
    span = _span(series)
    if span is None:
        return HourlySeries(0, [])
    start, end = span
    n = (end - start) // HOUR
    total = np.zeros(n)
    seen = np.zeros(n, dtype=bool)
    for s in series:
        v = s.window(start, n)
        present = ~np.isnan(v)
        total[present] += v[present]
        seen |= present
    total[~seen] = np.nan
    return HourlySeries(start, total)


def cluster_members(portfolio: Iterable[CampaignRecord], key: ClusterKey, ids=None) -> list:
    """Ids of campaigns in ``key``, optionally restricted to ``ids``; sorted."""
    return sorted(c.id for c in portfolio if key in clusters_of(c) and (ids is None or c.id in ids))


def aggregate_cluster(
    stable,
    key: ClusterKey,
    per_campaign: Mapping[str, HourlySeries],
    portfolio: Iterable[CampaignRecord],
    warnings: Optional[list] = None,
) -> HourlySeries:
    """Sum the hourly series of stable campaigns belonging to ``key``.

    ``stable`` is a StableSet or any container of campaign ids.
    """
    ids = getattr(stable, "campaign_ids", stable)
    members = [cid for cid in cluster_members(portfolio, key, ids) if cid in per_campaign]
    if not members:
        msg = f"cluster {key} has no stable members"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return HourlySeries(0, [])
    return sum_series(per_campaign[cid] for cid in members)


@dataclass(frozen=True, eq=False)
class ChangeMetric:
    cluster: Optional[ClusterKey]
    p: int
    start_hour: int
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d", _readonly(np.array(self.d, dtype=float)))

    def __len__(self):
        return len(self.d)

    def hours(self) -> np.ndarray:
        return self.start_hour + HOUR * np.arange(len(self.d), dtype=np.int64)

    def present(self):
        """(hours, values) of the defined slots."""
        mask = ~np.isnan(self.d)
        return self.hours()[mask], self.d[mask]

    def to_csv(self) -> str:
        rows = ["hour,value"]
        for h, v in zip(self.hours().tolist(), self.d.tolist()):
            rows.append(f"{h}," if np.isnan(v) else f"{h},{v!r}")
        return "\n".join(rows) + "\n"

    def write_csv(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path, cluster=None, p=7) -> "ChangeMetric":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != "hour,value":
            raise ValueError(f"{path}: expected header 'hour,value'")
        hours, vals = [], []
        for line in lines[1:]:
            h, _, v = line.partition(",")
            hours.append(int(h))
            vals.append(float(v) if v else np.nan)
        if not hours:
            return cls(cluster, p, 0, [])
        if any(b - a != HOUR for a, b in zip(hours, hours[1:])):
            raise ValueError(f"{path}: hours must be consecutive")
        return cls(cluster, p, hours[0], vals)


def change_metric(
    m: HourlySeries, p: int, cluster: Optional[ClusterKey] = None, warnings: Optional[list] = None
) -> ChangeMetric:
    """d_t = m_t - m_(t - p days) wherever both sides are present."""
    if p <= 0:
        raise ValueError("p must be > 0")
    lag = 24 * p
    v = m.values
    d = np.full(len(v), np.nan)
    if len(v) <= lag:
        msg = f"series of {len(v)} hours is shorter than the {lag}-hour lag; change metric is empty"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
    else:
        d[lag:] = v[lag:] - v[:-lag]
    return ChangeMetric(cluster, p, m.start_hour, d)
