"""Matplotlib report figures rendered next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import CLASS_NAMES, EVAL_CLASSES
from .metrics import ConfusionMatrix, macc, miou

_CLASS_COLORS = ("#00C800", "#E6D200", "#2050E0", "#D02020")


def save_loss_curve(history, out_path, title="training loss"):
    """history rows: (step, loss, lr)."""
    steps = [h[0] for h in history]
    losses = [h[1] for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=1.2, color="#205080")
    ax.set_xlabel("step")
    ax.set_ylabel("cross entropy")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def save_iou_bars(cm: ConfusionMatrix, out_path, title="per-class IoU"):
    iou = cm.per_class_iou()
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    xs = np.arange(EVAL_CLASSES)
    vals = [0.0 if not np.isfinite(v) else v for v in iou]
    ax.bar(xs, vals, color=_CLASS_COLORS)
    ax.set_xticks(xs, CLASS_NAMES[:EVAL_CLASSES])
    ax.set_ylim(0, 1)
    ax.set_ylabel("IoU")
    ax.set_title(f"{title} (mIoU {100 * miou(cm):.1f}%, mAcc {100 * macc(cm):.1f}%)")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def save_ablation_bars(rows, out_path, title="fusion placement"):
    """rows: (strategy, miou, macc)."""
    strategies = [r[0] for r in rows]
    xs = np.arange(len(rows))
    width = 0.38
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(xs - width / 2, [r[1] for r in rows], width, label="mIoU", color="#205080")
    ax.bar(xs + width / 2, [r[2] for r in rows], width, label="mAcc", color="#80a0c0")
    ax.set_xticks(xs, strategies)
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
