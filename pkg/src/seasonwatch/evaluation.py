"""Scoring of detector labels against injected ground truth."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import HOUR
from .detector import Label


def _pairs(labels) -> list:
    out = []
    for item in labels:
        if hasattr(item, "hour") and hasattr(item, "label"):
            out.append((int(item.hour), Label(item.label)))
        else:
            h, lab = item[0], item[1]
            out.append((int(h), Label(lab)))
    return out


def confusion(labels, truth: Iterable[int], tolerance: int = 0, unlabeled: str = "error"):
    """(TP, FP, FN) from per-hour labels and the set of truly anomalous hours.

    With ``tolerance`` > 0 an anomaly label counts as a hit when a true hour
    lies within that many hours, and a true hour counts as found when an
    anomaly label does.  Truth hours without any label raise unless
    ``unlabeled="miss"``, which counts them as false negatives.
    """
    pairs = _pairs(labels)
    labeled = {h for h, _ in pairs}
    truth = set(int(h) for h in truth)
    missing = truth - labeled
    if missing and unlabeled != "miss":
        raise ValueError(f"{len(missing)} truth hours have no label, first {min(missing)}")
    flagged = {h for h, lab in pairs if lab is Label.ANOMALY}
    if tolerance <= 0:
        tp = len(flagged & truth)
        return tp, len(flagged) - tp, len(truth) - tp
    near = lambda h, pool: any(h + k * HOUR in pool for k in range(-tolerance, tolerance + 1))
    tp = sum(1 for h in flagged if near(h, truth))
    fn = sum(1 for h in truth if not near(h, flagged))
    return tp, len(flagged) - tp, fn


def precision_recall(tp: int, fp: int, fn: int):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def detection_latency(labels, start: int, end: int) -> Optional[int]:
    """Hours from ``start`` to the first anomaly label inside ``[start, end)``."""
    hits = [h for h, lab in _pairs(labels) if lab is Label.ANOMALY and start <= h < end]
    return (min(hits) - start) // HOUR if hits else None


@dataclass
class EvalReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float
    config_snapshot: dict = field(default_factory=dict)
    latencies: dict = field(default_factory=dict)  # incident name -> hours or None
    cluster: str = ""
    p: int = 7
    note: str = ""

    def to_text(self) -> str:
        lines = [
            f"cluster: {self.cluster or '-'}  p={self.p}",
            f"true positives:  {self.true_positives}",
            f"false positives: {self.false_positives}",
            f"false negatives: {self.false_negatives}",
            f"precision: {self.precision:.4f}",
            f"recall:    {self.recall:.4f}",
            f"f1:        {self.f1:.4f}",
        ]
        for name, lat in self.latencies.items():
            lines.append(f"latency {name}: {'missed' if lat is None else f'{lat} h'}")
        if self.note:
            lines.append(f"note: {self.note}")
        if self.config_snapshot:
            lines.append("config: " + " ".join(f"{k}={v}" for k, v in self.config_snapshot.items()))
        return "\n".join(lines) + "\n"

    CSV_HEADER = "cluster,p,tp,fp,fn,precision,recall,f1"

    def csv_row(self) -> str:
        return (
            f"{self.cluster},{self.p},{self.true_positives},{self.false_positives},"
            f"{self.false_negatives},{self.precision!r},{self.recall!r},{self.f1!r}"
        )

    def to_csv(self) -> str:
        return self.CSV_HEADER + "\n" + self.csv_row() + "\n"


def evaluate(
    labels,
    truth: Iterable[int],
    incidents=(),
    config_snapshot: Optional[dict] = None,
    cluster: str = "",
    p: int = 7,
    tolerance: int = 0,
    unlabeled: str = "error",
) -> EvalReport:
    pairs = _pairs(labels)
    truth = set(truth)
    tp, fp, fn = confusion(pairs, truth, tolerance, unlabeled)
    precision, recall = precision_recall(tp, fp, fn)
    notes = []
    if tp + fp == 0:
        notes.append("no anomaly labels; precision reported as 0")
    if tp + fn == 0:
        notes.append("no anomalous hours in truth; recall reported as 0")
    latencies = {}
    for inc in incidents:
        name = getattr(inc, "name", "") or str(inc.start)
        latencies[name] = detection_latency(pairs, inc.start, inc.end)
    return EvalReport(
        tp, fp, fn, precision, recall, f1(precision, recall),
        dict(config_snapshot or {}), latencies, cluster, p, "; ".join(notes),
    )


def median_abs_deviation(values) -> float:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if len(v) == 0:
        return float("nan")
    return float(np.median(np.abs(v - np.median(v))))


@dataclass(frozen=True)
class StabilityRow:
    p: int
    mad_all: float
    mad_stable: float

    @property
    def ratio(self) -> float:
        return self.mad_stable / self.mad_all if self.mad_all else float("nan")


def stability_report(all_metrics: dict, stable_metrics: dict, p_values, exclude_hours=()) -> list:
    """MAD of each change metric outside ``exclude_hours``, stable-only against all campaigns."""
    exclude = np.array(sorted(set(exclude_hours)), dtype=np.int64)
    rows = []
    for p in p_values:
        mads = []
        for cm in (all_metrics[p], stable_metrics[p]):
            keep = ~np.isin(cm.hours(), exclude)
            mads.append(median_abs_deviation(cm.d[keep]))
        rows.append(StabilityRow(p, mads[0], mads[1]))
    return rows


def stability_report_csv(rows) -> str:
    out = ["p,mad_all,mad_stable,ratio"]
    out.extend(f"{r.p},{r.mad_all!r},{r.mad_stable!r},{r.ratio!r}" for r in rows)
    return "\n".join(out) + "\n"
