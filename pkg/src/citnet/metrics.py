"""Confusion-matrix segmentation metrics.

All metrics derive from per-sample TP/FP/TN/FN counts of binary masks.
Undefined ratios (empty denominator) are reported as NaN sentinels and
skipped by the means rather than raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

METRIC_NAMES = ("dice", "jaccard", "sensitivity", "accuracy", "specificity", "voe", "rvd")


@dataclass
class SampleMetrics:
    dice: float
    jaccard: float
    sensitivity: float
    accuracy: float
    specificity: float
    voe: float
    rvd: float

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass
class MetricsReport:
    samples: list[SampleMetrics] = field(default_factory=list)

    def mean(self, name: str) -> float:
        values = [getattr(s, name) for s in self.samples]
        finite = [v for v in values if not math.isnan(v)]
        return sum(finite) / len(finite) if finite else math.nan

    def to_dict(self) -> dict:
        return {
            "samples": [s.to_dict() for s in self.samples],
            "mean": {name: self.mean(name) for name in METRIC_NAMES},
        }

    @staticmethod
    def from_dict(data: dict) -> "MetricsReport":
        return MetricsReport(samples=[SampleMetrics(**row) for row in data["samples"]])


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else math.nan


def compute_metrics(pred: np.ndarray, target: np.ndarray) -> SampleMetrics:
    """Metrics for one binary mask pair (values must be 0/1)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {target.shape}")
    p = pred.astype(bool)
    g = target.astype(bool)
    tp = float(np.count_nonzero(p & g))
    fp = float(np.count_nonzero(p & ~g))
    fn = float(np.count_nonzero(~p & g))
    tn = float(np.count_nonzero(~p & ~g))

    dice = _ratio(2 * tp, 2 * tp + fp + fn)
    jaccard = _ratio(tp, tp + fp + fn)
    if tp + fp + fn == 0:  # both masks empty: perfect agreement
        dice, jaccard = 1.0, 1.0
    sensitivity = _ratio(tp, tp + fn)
    specificity = _ratio(tn, tn + fp)
    accuracy = _ratio(tp + tn, tp + tn + fp + fn)
    voe = 1.0 - jaccard if not math.isnan(jaccard) else math.nan
    gt_volume = tp + fn
    rvd = _ratio(float(np.count_nonzero(p)) - gt_volume, gt_volume)
    return SampleMetrics(dice=dice, jaccard=jaccard, sensitivity=sensitivity,
                         accuracy=accuracy, specificity=specificity, voe=voe, rvd=rvd)


def evaluate_masks(preds: list[np.ndarray], targets: list[np.ndarray]) -> MetricsReport:
    if len(preds) != len(targets):
        raise DimensionError(f"{len(preds)} predictions vs {len(targets)} targets")
    return MetricsReport(samples=[compute_metrics(p, t) for p, t in zip(preds, targets)])
