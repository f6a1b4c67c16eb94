"""Pixel-level F1 / MCC and the optimal-threshold evaluation protocol."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Optional, Sequence

import numpy as np

from .image import as_mask, as_soft_mask, check_same_size

Mode = Literal["per_image_threshold", "global_threshold"]
Metric = Literal["f1", "mcc"]

MODES = ("per_image_threshold", "global_threshold")
METRICS = ("f1", "mcc")

# 256 uniform levels k/255, matching 8-bit prediction exports
THRESHOLDS = np.arange(256) / 255.0


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, gt) -> ConfusionCounts:
    pred, gt = as_mask(pred), as_mask(gt)
    check_same_size(pred, gt)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def f1(c: ConfusionCounts) -> float:
    """``2tp / (2tp + fp + fn)``; 1.0 when prediction and truth are both empty."""
    tp, fp, fn, _ = c
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2 * tp / denom


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0.0 when any marginal is empty.

    Counts are combined as Python integers so megapixel products stay exact.
    """
    tp, fp, fn, tn = (int(v) for v in c)
    prod = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if prod == 0:
        return 0.0
    num = tp * tn - fp * fn
    value = num / math.sqrt(prod)
    return max(-1.0, min(1.0, value))


def _score_arrays(tp, fp, fn, tn, metric: str) -> np.ndarray:
    tp, fp, fn, tn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn, tn))
    if metric == "f1":
        denom = 2 * tp + fp + fn
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(denom == 0, 1.0, 2 * tp / np.where(denom == 0, 1, denom))
        return out
    prod = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(prod == 0, 0.0, (tp * tn - fp * fn) / np.sqrt(np.where(prod == 0, 1, prod)))
    return np.clip(out, -1.0, 1.0)


def counts_per_threshold(pred, gt, thresholds: Optional[np.ndarray] = None):
    """Confusion counts of ``pred >= t`` against ``gt`` for every threshold.

    Returns four integer arrays ``(tp, fp, fn, tn)`` aligned with
    ``thresholds``.
    """
    pred, gt = as_soft_mask(pred), as_mask(gt)
    check_same_size(pred, gt)
    thresholds = THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    pos = np.sort(pred[gt])
    neg = np.sort(pred[~gt])
    tp = pos.size - np.searchsorted(pos, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg, thresholds, side="left")
    return tp, fp, pos.size - tp, neg.size - fp


@dataclass
class ImageScore:
    id: str
    best_threshold: float
    f1: float
    mcc: float


@dataclass
class EvalReport:
    mode: str
    metric: str
    per_image: list = field(default_factory=list)
    dataset_f1: float = 0.0
    dataset_mcc: float = 0.0
    global_threshold: Optional[float] = None

    def to_dict(self, digits: int = 6) -> dict:
        r = lambda v: round(float(v), digits)
        return {
            "mode": self.mode,
            "metric": self.metric,
            "global_threshold": None if self.global_threshold is None else r(self.global_threshold),
            "dataset_f1": r(self.dataset_f1),
            "dataset_mcc": r(self.dataset_mcc),
            "per_image": [
                {"id": s.id, "best_threshold": r(s.best_threshold), "f1": r(s.f1), "mcc": r(s.mcc)}
                for s in self.per_image
            ],
        }


def sweep_thresholds(preds: Sequence, gts: Sequence, mode: str = "per_image_threshold",
                     metric: str = "f1", ids: Optional[Sequence[str]] = None,
                     thresholds: Optional[np.ndarray] = None) -> EvalReport:
    """Score soft predictions at their optimal threshold.

    ``per_image_threshold`` picks each image's own best threshold;
    ``global_threshold`` picks one threshold maximizing the mean score over
    the dataset. Ties go to the lowest threshold. Dataset scores are means
    of the per-image scores at the chosen thresholds.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    if len(preds) == 0 or len(preds) != len(gts):
        raise ValueError("predictions and ground truths must be non-empty and aligned")
    if ids is None:
        ids = [str(i) for i in range(len(preds))]
    grid = THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)

    f1_table, mcc_table = [], []
    for pred, gt in zip(preds, gts):
        counts = counts_per_threshold(pred, gt, grid)
        f1_table.append(_score_arrays(*counts, "f1"))
        mcc_table.append(_score_arrays(*counts, "mcc"))
    f1_table, mcc_table = np.array(f1_table), np.array(mcc_table)
    driver = f1_table if metric == "f1" else mcc_table

    # np.argmax returns the first maximum, i.e. the lowest threshold on ties
    report = EvalReport(mode=mode, metric=metric)
    if mode == "global_threshold":
        k = int(np.argmax(driver.mean(axis=0)))
        report.global_threshold = float(grid[k])
        chosen = np.full(len(preds), k)
    else:
        chosen = np.argmax(driver, axis=1)
    rows = np.arange(len(preds))
    for i, k in zip(rows, chosen):
        report.per_image.append(ImageScore(str(ids[i]), float(grid[k]),
                                           float(f1_table[i, k]), float(mcc_table[i, k])))
    report.dataset_f1 = float(f1_table[rows, chosen].mean())
    report.dataset_mcc = float(mcc_table[rows, chosen].mean())
    return report
