"""Selection of behaviorally stable campaigns.

A campaign is kept when its setup passes the fixed rules (USD, active,
running long enough) and its recent hourly curve correlates with the same
window one or more seasonal periods earlier.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .core import DAY, HOUR, CampaignRecord, CampaignStatus, HourlySeries, PipelineConfig, hour_floor

log = logging.getLogger(__name__)


def check_setup(c: CampaignRecord, now: int, min_duration_days: int) -> bool:
    if c.currency != "USD" or c.status is not CampaignStatus.ACTIVE:
        return False
    if now - c.start <= min_duration_days * DAY:
        return False
    return c.end is None or c.end > now


def window_vector(s: HourlySeries, end_hour: int, l: int) -> Optional[np.ndarray]:
    """The ``l`` hourly values ending at ``end_hour`` inclusive, or None on any gap."""
    if l <= 0:
        raise ValueError("l must be > 0")
    v = s.window(end_hour - (l - 1) * HOUR, l)
    if np.isnan(v).any():
        return None
    return v


def pearson_correlation(v1, v2) -> Optional[float]:
    """Sample Pearson correlation; None when either side has zero variance."""
    a = np.asarray(v1, dtype=float)
    b = np.asarray(v2, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"vectors must be 1-d and equally long, got {a.shape} and {b.shape}")
    if len(a) < 2:
        raise ValueError("need at least two points")
    # exact flatness test: centering a constant vector can leave rounding residue
    if a.max() == a.min() or b.max() == b.min():
        return None
    a = a - a.mean()
    b = b - b.mean()
    saa = float(a @ a)
    sbb = float(b @ b)
    denom = np.sqrt(saa) * np.sqrt(sbb)
    if denom == 0.0:  # variance underflowed
        return None
    r = float(a @ b) / denom
    return min(1.0, max(-1.0, r))


def window_correlation(series: HourlySeries, now: int, p: int, cfg: PipelineConfig) -> Optional[float]:
    end = hour_floor(now) - cfg.x * HOUR
    v1 = window_vector(series, end, cfg.l)
    v2 = window_vector(series, end - p * DAY, cfg.l)
    if v1 is None or v2 is None:
        return None
    return pearson_correlation(v1, v2)


def is_stable(series: HourlySeries, now: int, cfg: PipelineConfig) -> bool:
    for p in cfg.p_values:
        r = window_correlation(series, now, p, cfg)
        if r is None or not r > cfg.delta:
            return False
    return True


@dataclass(frozen=True)
class StableSet:
    campaign_ids: frozenset
    computed_at: int
    config_snapshot: PipelineConfig

    def __contains__(self, cid):
        return cid in self.campaign_ids

    def __len__(self):
        return len(self.campaign_ids)

    def to_text(self) -> str:
        head = (
            f"# computed_at={self.computed_at} config={self.config_snapshot.digest()} "
            f"count={len(self.campaign_ids)}\n"
        )
        return head + "".join(f"{cid}\n" for cid in sorted(self.campaign_ids))

    def write(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path, config: PipelineConfig) -> "StableSet":
        computed_at = None
        ids = set()
        for line in Path(path).read_text().splitlines():
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    if k == "computed_at":
                        computed_at = int(v)
            elif line.strip():
                ids.add(line.strip())
        if computed_at is None:
            raise ValueError(f"{path}: missing computed_at header")
        return cls(frozenset(ids), computed_at, config)


def refresh_stable_set(
    portfolio,
    series_lookup: Mapping[str, HourlySeries],
    now: int,
    cfg: PipelineConfig,
    warnings: Optional[list] = None,
) -> StableSet:
    keep = set()
    for c in portfolio:
        if not check_setup(c, now, cfg.min_duration_days):
            continue
        series = series_lookup.get(c.id)
        if series is None:
            msg = f"no series for campaign {c.id}; excluded from stable set"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        if is_stable(series, now, cfg):
            keep.add(c.id)
    return StableSet(frozenset(keep), now, cfg)


def rolling_correlation(values: np.ndarray, lag: int, l: int) -> np.ndarray:
    """Pearson correlation of every length-``l`` window with the window ``lag`` slots earlier.

    Element ``i`` compares the windows ending at slots ``i`` and ``i - lag``;
    NaN where either window is incomplete, has a gap, or is flat.
    """
    n = len(values)
    out = np.full(n, np.nan)
    if n < l + lag:
        return out
    w = np.lib.stride_tricks.sliding_window_view(values, l)  # w[k] ends at slot k + l - 1
    a = w[lag:]
    b = w[:-lag] if lag else w
    am = a - a.mean(axis=1, keepdims=True)
    bm = b - b.mean(axis=1, keepdims=True)
    saa = np.einsum("ij,ij->i", am, am)
    sbb = np.einsum("ij,ij->i", bm, bm)
    sab = np.einsum("ij,ij->i", am, bm)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = sab / np.sqrt(saa * sbb)
    flat = w.max(axis=1) == w.min(axis=1)
    r[flat[lag:] | (flat[:-lag] if lag else flat)] = np.nan
    out[l - 1 + lag :] = np.clip(r, -1.0, 1.0)
    return out


def stability_mask(
    c: CampaignRecord, series: HourlySeries, start_hour: int, n_hours: int, cfg: PipelineConfig
) -> np.ndarray:
    """Vectorised ``check_setup and is_stable`` for every hour ``start_hour + i*3600``.

    Matches the scalar functions hour by hour; used to replay hourly refreshes.
    """
    hours = start_hour + HOUR * np.arange(n_hours, dtype=np.int64)
    ok = np.full(n_hours, c.currency == "USD" and c.status is CampaignStatus.ACTIVE)
    ok &= hours - c.start > cfg.min_duration_days * DAY
    if c.end is not None:
        ok &= c.end > hours
    if not ok.any():
        return ok
    # windows may reach back before start_hour
    back = cfg.x + cfg.max_p * 24 + cfg.l
    vals = series.window(start_hour - back * HOUR, back + n_hours)
    for p in cfg.p_values:
        r = rolling_correlation(vals, p * 24, cfg.l)
        # decision at hour index i uses windows ending at slot (back + i - x)
        r_at = r[back - cfg.x : back - cfg.x + n_hours]
        with np.errstate(invalid="ignore"):
            ok &= r_at > cfg.delta
    return ok
