"""Streaming detector for negative anomalies in a change metric.

The detector keeps three exponentially decayed sums (of values, of squares
and of weights) from which it derives a Gaussian mean and deviation.  A point
outside ``mu +/- beta*sigma`` is never folded into the sums.  Only points
below the range are anomalies; ``beta`` narrows in proportion to the share
of anomalies among the most recent labels.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .core import PipelineConfig


class Label(str, enum.Enum):
    NORMAL = "normal"
    ANOMALY = "anomaly"
    # out of range but not flagged; with the default test this means above the range
    POSITIVE_OUTLIER = "positive_outlier"


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = 0.99
    beta_max: float = 3.0
    shrink_window: int = 168
    sigma_floor: float = 1e-12
    beta_policy: str = "window"  # "window": recompute every step; "literal": only on anomalies
    negative_test: str = "mean"  # "mean": d < mu; "zero": d < 0

    @classmethod
    def from_pipeline(cls, cfg: PipelineConfig) -> "DetectorConfig":
        return cls(
            alpha=cfg.alpha,
            beta_max=cfg.beta_max,
            shrink_window=cfg.shrink_window,
            sigma_floor=cfg.sigma_floor,
            beta_policy=cfg.beta_policy,
            negative_test=cfg.negative_test,
        )


def shrink_beta(window: Iterable[Label], beta_max: float = 3.0) -> float:
    """beta_max scaled by the fraction of non-anomalous labels in ``window``."""
    n = n_abnormal = 0
    for lab in window:
        n += 1
        n_abnormal += lab is Label.ANOMALY
    if n == 0:
        raise ValueError("label window is empty")
    return beta_max * (n - n_abnormal) / n


@dataclass
class DetectorState:
    X: float
    X2: float
    n: float
    beta: float
    window: deque
    cfg: DetectorConfig = field(default_factory=DetectorConfig)

    @property
    def mu(self) -> float:
        return self.X / self.n

    @property
    def sigma(self) -> float:
        mu = self.mu
        var = max(self.X2 / self.n - mu * mu, 0.0)
        return max(math.sqrt(var), self.cfg.sigma_floor)

    def _absorb(self, d: float):
        a = self.cfg.alpha
        self.X = a * self.X + d
        self.X2 = a * self.X2 + d * d
        self.n = a * self.n + 1.0

    def step(self, d: float) -> Label:
        mu, sigma = self.mu, self.sigma
        if abs(d - mu) > self.beta * sigma:
            below = d < mu if self.cfg.negative_test == "mean" else d < 0
            if below:
                label = Label.ANOMALY
                self.window.append(Label.ANOMALY)
                self.beta = shrink_beta(self.window, self.cfg.beta_max)
                return label
            label = Label.POSITIVE_OUTLIER
        else:
            label = Label.NORMAL
            self._absorb(d)
        self.window.append(Label.NORMAL)
        if self.cfg.beta_policy == "window":
            self.beta = shrink_beta(self.window, self.cfg.beta_max)
        return label


def init_detector(training: Sequence[float], cfg: DetectorConfig = DetectorConfig()) -> DetectorState:
    if len(training) == 0:
        raise InsufficientDataError("insufficient training data")
    state = DetectorState(0.0, 0.0, 0.0, cfg.beta_max, deque(maxlen=cfg.shrink_window), cfg)
    for d in training:
        state._absorb(float(d))
    return state


def step(state: DetectorState, d_t: float):
    """Label one point; returns ``(label, state)`` with ``state`` updated in place."""
    return state.step(float(d_t)), state


class Detection(NamedTuple):
    hour: int
    label: Label
    value: float
    mu: float
    sigma: float
    beta: float

    @property
    def lower(self) -> float:
        return self.mu - self.beta * self.sigma

    @property
    def upper(self) -> float:
        return self.mu + self.beta * self.sigma


def detect_series(d, cfg, training_len: int = None) -> list:
    """Label every present point of a change metric after the training prefix.

    ``cfg`` may be a PipelineConfig (whose training_len is used) or a
    DetectorConfig together with ``training_len``.
    """
    if isinstance(cfg, PipelineConfig):
        training_len = cfg.training_len if training_len is None else training_len
        cfg = DetectorConfig.from_pipeline(cfg)
    if training_len is None:
        training_len = 168
    hours, values = d.present()
    if len(values) < training_len:
        raise InsufficientDataError(
            f"change metric has {len(values)} present points, need {training_len} for training"
        )
    state = init_detector(values[:training_len], cfg)
    out = []
    for h, v in zip(hours[training_len:].tolist(), values[training_len:].tolist()):
        mu, sigma, beta = state.mu, state.sigma, state.beta
        out.append(Detection(h, state.step(v), v, mu, sigma, beta))
    return out


LABEL_HEADER = "hour,value,mu,sigma,beta,label"


def labels_to_csv(detections: Iterable[Detection]) -> str:
    rows = [LABEL_HEADER]
    for r in detections:
        rows.append(f"{r.hour},{r.value!r},{r.mu!r},{r.sigma!r},{r.beta!r},{r.label.value}")
    return "\n".join(rows) + "\n"


def bounds_to_csv(detections: Iterable[Detection]) -> str:
    rows = ["hour,lower,upper"]
    for r in detections:
        rows.append(f"{r.hour},{r.lower!r},{r.upper!r}")
    return "\n".join(rows) + "\n"


def read_labels_csv(path) -> list:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != LABEL_HEADER:
        raise ValueError(f"{path}: expected header {LABEL_HEADER!r}")
    out = []
    for line in lines[1:]:
        h, v, mu, sigma, beta, lab = line.split(",")
        out.append(Detection(int(h), Label(lab), float(v), float(mu), float(sigma), float(beta)))
    return out
