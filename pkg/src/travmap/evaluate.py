"""Dataset evaluation, inference timing, and the fusion-order ablation."""

from __future__ import annotations

import csv
import platform
import time
from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import Checkpoint
from .dataset import MapDataset
from .grid import GridSpec, cell_centers_grid
from .metrics import ConfusionMatrix, macc, miou
from .models.completion import predict_classes
from .models.network import MultiFrameModel
from .train import model_from_checkpoint

STRATEGIES = ("pre", "in", "post")


@torch.no_grad()
def predict_frame(model, dataset: MapDataset, i: int, offsets=None) -> np.ndarray:
    """Class map predicted for dataset frame i (multi-frame when offsets given)."""
    hw = (dataset.grid.height, dataset.grid.width)
    if isinstance(model, MultiFrameModel):
        offsets = offsets if offsets is not None else model_offsets(model)
        ids = dataset.frame_window(i, offsets)
        logits = model([[dataset.pillars(j) for j in ids]], [[dataset.pose(j) for j in ids]])
    else:
        logits = model([dataset.pillars(i)])
    return predict_classes(logits[0], hw).numpy().astype(np.uint8)


def model_offsets(model: MultiFrameModel):
    return getattr(model, "frame_offsets", tuple(-5 * k for k in range(model.frames)))


def evaluate_dataset(model, dataset: MapDataset, offsets=None, cell_mask=None) -> ConfusionMatrix:
    """Accumulate a confusion matrix over every frame of a dataset."""
    model.eval()
    cm = ConfusionMatrix()
    for i in range(len(dataset)):
        pred = predict_frame(model, dataset, i, offsets)
        cm.add(pred, dataset.class_map(i), cell_mask)
    return cm


def far_annulus_mask(g: GridSpec, min_radius: float) -> np.ndarray:
    """Cells whose center lies beyond min_radius meters from the sensor."""
    xx, yy = cell_centers_grid(g)
    return np.hypot(xx, yy) > min_radius


@dataclass
class SpeedReport:
    fps: float
    median_seconds: float
    iterations: int
    hardware: str

    def __str__(self):
        return (
            f"{self.fps:.2f} frames/s (median {1e3 * self.median_seconds:.1f} ms "
            f"over {self.iterations} iterations) on {self.hardware}"
        )


def benchmark_speed(predict, frames, warmup: int = 2, iters: int = 10) -> SpeedReport:
    """Median wall-clock rate of `predict(frame)` over the given frames."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    frames = list(frames)
    for i in range(warmup):
        predict(frames[i % len(frames)])
    times = []
    for i in range(iters):
        start = time.perf_counter()
        predict(frames[i % len(frames)])
        times.append(time.perf_counter() - start)
    median = float(np.median(times))
    hardware = f"{platform.machine()} / {platform.processor() or 'cpu'} / {torch.get_num_threads()} torch threads"
    return SpeedReport(1.0 / median, median, iters, hardware)


@dataclass
class AblationReport:
    rows: list  # (strategy, miou, macc)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["strategy", "miou", "macc"])
            for strategy, m_iou, m_acc in self.rows:
                writer.writerow([strategy, f"{m_iou:.6f}", f"{m_acc:.6f}"])

    def table(self) -> str:
        lines = [f"{'strategy':>10s} | {'mIoU':>8s} | {'mAcc':>8s}"]
        lines.append("-" * len(lines[0]))
        for strategy, m_iou, m_acc in self.rows:
            lines.append(f"{strategy:>10s} | {100 * m_iou:7.2f}% | {100 * m_acc:7.2f}%")
        return "\n".join(lines)


def ablate_fusion_order(dataset: MapDataset, checkpoints: dict, offsets=None) -> AblationReport:
    """Evaluate pre / in / post fusion checkpoints on the identical split."""
    missing = [s for s in STRATEGIES if s not in checkpoints]
    if missing:
        raise ValueError(f"missing checkpoints for strategies: {missing}")
    rows = []
    for strategy in STRATEGIES:
        ckpt = checkpoints[strategy]
        if not isinstance(ckpt, Checkpoint):
            ckpt = Checkpoint.load(ckpt)
        model, _ = model_from_checkpoint(ckpt)
        frame_offsets = offsets
        if frame_offsets is None:
            frame_offsets = tuple(ckpt.meta.get("frame_offsets", ())) or None
        cm = evaluate_dataset(model, dataset, frame_offsets)
        rows.append((strategy, miou(cm), macc(cm)))
    return AblationReport(rows)
