"""Binary change-detection metrics from confusion counts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class MetricsReport:
    tp: int
    tn: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    iou: float
    oa: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def as_dict(self) -> dict:
        return asdict(self)


def binarize(p, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p = p.data if isinstance(p, Tensor) else np.asarray(p)
    return (p >= threshold).astype(np.uint8)


def confusion(p_bin, mask) -> tuple[int, int, int, int]:
    """``(tp, tn, fp, fn)`` of a binary prediction against a binary mask."""
    p = np.asarray(p_bin).astype(bool)
    m = np.asarray(mask).astype(bool)
    if p.shape != m.shape:
        raise ValueError(f"prediction shape {p.shape} does not match mask shape {m.shape}")
    tp = int(np.count_nonzero(p & m))
    fp = int(np.count_nonzero(p & ~m))
    fn = int(np.count_nonzero(~p & m))
    tn = int(p.size - tp - fp - fn)
    return tp, tn, fp, fn


def metrics(counts) -> MetricsReport:
    """Precision, recall, F1, IoU and overall accuracy.

    Ratios with a zero denominator are 0, except that an empty task
    (no positives predicted or present) scores 1.
    """
    tp, tn, fp, fn = (int(c) for c in counts)
    total = tp + tn + fp + fn
    if total <= 0:
        raise ValueError("metrics need at least one evaluated pixel")
    nothing = tp + fp + fn == 0
    precision = tp / (tp + fp) if tp + fp else (1.0 if nothing else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if nothing else 0.0)
    if nothing:
        f1 = 1.0
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    iou = tp / (tp + fp + fn) if not nothing else 1.0
    oa = (tp + tn) / total
    return MetricsReport(tp, tn, fp, fn, precision, recall, f1, iou, oa)
