"""Confusion-matrix accounting and the mIoU / mAcc metrics.

Four evaluated classes (free, low-cost, medium-cost, lethal). Cells whose
ground truth is unknown are rejected from scoring; cells predicted
unknown against a known ground truth count as a miss for the true class
(a fifth prediction bucket folded into FN). Note mAcc here is
TP / (TP + FP) per class, which differs from the recall-based accuracy
used elsewhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import CLASS_NAMES, EVAL_CLASSES, UNKNOWN


@dataclass
class ConfusionMatrix:
    """counts[gt, pred]; pred column 4 collects predicted-unknown cells."""

    counts: np.ndarray = field(
        default_factory=lambda: np.zeros((EVAL_CLASSES, EVAL_CLASSES + 1), dtype=np.int64)
    )
    rejected: int = 0

    def add(self, pred: np.ndarray, gt: np.ndarray, mask: np.ndarray = None) -> "ConfusionMatrix":
        """Accumulate one prediction/ground-truth map pair (optionally masked)."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        if mask is not None:
            pred, gt = pred[mask], gt[mask]
        pred, gt = pred.ravel().astype(np.int64), gt.ravel().astype(np.int64)
        keep = gt != UNKNOWN
        self.rejected += int((~keep).sum())
        pred, gt = pred[keep], gt[keep]
        lin = gt * (EVAL_CLASSES + 1) + pred
        binned = np.bincount(lin, minlength=EVAL_CLASSES * (EVAL_CLASSES + 1))
        self.counts += binned.reshape(EVAL_CLASSES, EVAL_CLASSES + 1)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        self.rejected += other.rejected
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.counts.copy(), self.rejected)
        return out.merge(other)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self) -> np.ndarray:
        return np.diagonal(self.counts[:, :EVAL_CLASSES]).copy()

    def fp(self) -> np.ndarray:
        return self.counts[:, :EVAL_CLASSES].sum(axis=0) - self.tp()

    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp()

    def per_class_iou(self) -> np.ndarray:
        tp, fp, fn = self.tp(), self.fp(), self.fn()
        denom = tp + fp + fn
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, tp / denom, np.nan)


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray, mask: np.ndarray = None) -> ConfusionMatrix:
    return cm.add(pred, gt, mask)


def _class_mean(values: np.ndarray, what: str) -> float:
    valid = ~np.isnan(values)
    if not valid.any():
        warnings.warn(f"{what} undefined: no class has any evaluated cells")
        return float("nan")
    return float(values[valid].mean())


def miou(cm: ConfusionMatrix) -> float:
    """Mean over classes of TP / (TP + FP + FN); empty classes are excluded."""
    return _class_mean(cm.per_class_iou(), "mIoU")


def macc(cm: ConfusionMatrix) -> float:
    """Mean over classes of TP / (TP + FP); empty classes are excluded."""
    tp, fp = cm.tp(), cm.fp()
    denom = tp + fp
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(denom > 0, tp / denom, np.nan)
    return _class_mean(vals, "mAcc")


def metrics_csv_rows(cm: ConfusionMatrix) -> list:
    """Rows of (class, tp, fp, fn, iou) for the metrics CSV."""
    tp, fp, fn, iou = cm.tp(), cm.fp(), cm.fn(), cm.per_class_iou()
    return [
        (CLASS_NAMES[i], int(tp[i]), int(fp[i]), int(fn[i]), float(iou[i]))
        for i in range(EVAL_CLASSES)
    ]


def summary_table(cm: ConfusionMatrix) -> str:
    """Per-class IoU table in the free / low-cost / medium-cost / lethal layout."""
    iou = cm.per_class_iou()
    header = " | ".join(f"{CLASS_NAMES[i]:>11s}" for i in range(EVAL_CLASSES))
    row = " | ".join(
        f"{100 * iou[i]:10.2f}%" if np.isfinite(iou[i]) else f"{'n/a':>11s}"
        for i in range(EVAL_CLASSES)
    )
    lines = [header, "-" * len(header), row,
             f"mIoU {100 * miou(cm):.2f}%  mAcc {100 * macc(cm):.2f}%  "
             f"cells {cm.total}  rejected {cm.rejected}"]
    return "\n".join(lines)
