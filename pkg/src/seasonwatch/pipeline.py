"""Filter -> aggregate -> change metric -> detect, over a whole portfolio."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .aggregation import ALL_CLUSTERS, ChangeMetric, ClusterKey, aggregate_cluster, change_metric, clusters_of, sum_series
from .core import HOUR, HourlySeries, PipelineConfig
from .detector import detect_series
from .stability import StableSet, refresh_stable_set, stability_mask

log = logging.getLogger(__name__)


def data_span(streams: Mapping[str, HourlySeries]):
    spans = [s for s in streams.values() if len(s)]
    if not spans:
        raise ValueError("no data in any stream")
    return min(s.start_hour for s in spans), max(s.end_hour for s in spans)


def monitor_start(data_start: int, cfg: PipelineConfig) -> int:
    """First hour scored by the detector: lag history plus training."""
    return data_start + (24 * cfg.detect_p + cfg.training_len) * HOUR


@dataclass
class ClusterRun:
    key: ClusterKey
    metrics: dict  # p -> ChangeMetric
    detections: list = field(default_factory=list)
    members: int = 0


@dataclass
class PipelineRun:
    config: PipelineConfig
    stable: Optional[StableSet]
    clusters: dict  # ClusterKey -> ClusterRun
    warnings: list = field(default_factory=list)
    # hourly membership mode: hour -> number of stable campaigns
    stable_counts: Optional[np.ndarray] = None


def snapshot_metrics(portfolio, streams, stable, key, p_values, warnings=None) -> dict:
    m = aggregate_cluster(stable, key, streams, portfolio, warnings)
    return {p: change_metric(m, p, key, warnings) for p in p_values}


def hourly_metrics(portfolio, streams, masks, start, n, key, p_values) -> dict:
    """Change metrics whose membership is re-evaluated every hour.

    For hour t the cluster sum uses the campaigns stable at t on both sides
    of the difference, so membership changes never show up as steps.
    """
    members = [c.id for c in portfolio if key in clusters_of(c) and c.id in masks]
    out = {}
    for p in p_values:
        lag = 24 * p
        now_sum = np.zeros(n)
        then_sum = np.zeros(n)
        now_seen = np.zeros(n, dtype=bool)
        then_seen = np.zeros(n, dtype=bool)
        for cid in members:
            mask = masks[cid]
            if not mask.any():
                continue
            v = streams[cid].window(start - lag * HOUR, n + lag)
            cur, prev = v[lag:], v[:n]
            ok = mask & ~np.isnan(cur)
            now_sum[ok] += cur[ok]
            now_seen |= ok
            ok = mask & ~np.isnan(prev)
            then_sum[ok] += prev[ok]
            then_seen |= ok
        d = np.where(now_seen & then_seen, now_sum - then_sum, np.nan)
        out[p] = ChangeMetric(key, p, start, d)
    return out


def run_pipeline(
    portfolio,
    streams: Mapping[str, HourlySeries],
    cfg: PipelineConfig,
    clusters=ALL_CLUSTERS,
    now: Optional[int] = None,
    detect: bool = True,
) -> PipelineRun:
    """Build per-cluster change metrics and label the ``cfg.detect_p`` variant.

    In ``snapshot`` membership the stable set is computed once at ``now``
    (default: the first scored hour, so it never sees the scored period's
    future).  In ``hourly`` membership it is refreshed for every hour.
    """
    warnings = []
    start, end = data_span(streams)
    p_values = tuple(sorted(set(cfg.p_values) | {cfg.detect_p}))
    stable = None
    counts = None
    runs = {}
    if cfg.membership == "snapshot":
        now = monitor_start(start, cfg) if now is None else now
        stable = refresh_stable_set(portfolio, streams, now, cfg, warnings)
        for key in clusters:
            metrics = snapshot_metrics(portfolio, streams, stable, key, p_values, warnings)
            n_members = sum(1 for c in portfolio if c.id in stable and key in clusters_of(c))
            runs[key] = ClusterRun(key, metrics, members=n_members)
    else:
        n = (end - start) // HOUR
        masks = {}
        for c in portfolio:
            if c.id not in streams:
                warnings.append(f"no series for campaign {c.id}; excluded from stable set")
                continue
            masks[c.id] = stability_mask(c, streams[c.id], start, n, cfg)
        counts = np.sum(list(masks.values()), axis=0) if masks else np.zeros(n, dtype=int)
        for key in clusters:
            metrics = hourly_metrics(portfolio, streams, masks, start, n, key, p_values)
            ever = sum(1 for c in portfolio if key in clusters_of(c) and c.id in masks and masks[c.id].any())
            runs[key] = ClusterRun(key, metrics, members=ever)
    if detect:
        for key, run in runs.items():
            cm = run.metrics[cfg.detect_p]
            present = int(np.count_nonzero(~np.isnan(cm.d)))
            if present < cfg.training_len:
                msg = f"cluster {key}: {present} change-metric points, below training length; skipped"
                log.warning(msg)
                warnings.append(msg)
                continue
            run.detections = detect_series(cm, cfg)
    return PipelineRun(cfg, stable, runs, warnings, counts)


def all_campaign_metrics(portfolio, streams, key: ClusterKey, p_values) -> dict:
    """Change metrics of a cluster summed over every campaign, stable or not."""
    members = [c.id for c in portfolio if key in clusters_of(c) and c.id in streams]
    m = sum_series(streams[cid] for cid in members)
    return {p: change_metric(m, p, key) for p in p_values}
