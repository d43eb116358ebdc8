"""Confusion-matrix scores for a predicted parent set.

Degenerate ratios follow one fixed convention: 0/0 scores 1 and x/0 scores
0, except the fall-out (FPR), where 0/0 scores 0 and x/0 scores 1. MCC uses
the general rule too, so an all-negative truth predicted as all-negative
has MCC = 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    tpr: float
    fpr: float
    csi: float
    acc: float
    f1: float
    mcc: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


METRIC_NAMES = ("tpr", "fpr", "csi", "acc", "f1", "mcc")


def confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool).reshape(-1)
    truth = np.asarray(truth, dtype=bool).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: pred {pred.shape[0]}, truth {truth.shape[0]}")
    return ConfusionCounts(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def _ratio(num: float, den: float, zero_zero: float = 1.0, x_zero: float = 0.0) -> float:
    if den == 0:
        return zero_zero if num == 0 else x_zero
    return num / den


def metrics(c: ConfusionCounts) -> MetricsReport:
    tp, fp, tn, fn = c.tp, c.fp, c.tn, c.fn
    mcc_den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return MetricsReport(
        tpr=_ratio(tp, tp + fn),
        fpr=_ratio(fp, fp + tn, zero_zero=0.0, x_zero=1.0),
        csi=_ratio(tp, tp + fn + fp),
        acc=_ratio(tp + tn, c.total),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        mcc=_ratio(tp * tn - fp * fn, math.sqrt(mcc_den)),
    )


def score(pred, truth) -> MetricsReport:
    return metrics(confusion(pred, truth))
