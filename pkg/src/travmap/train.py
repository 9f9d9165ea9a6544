"""Two-stage training: single-frame model first, then the fusion module
with the pillar encoder frozen. Optimization is AdamW (decoupled weight
decay); everything is deterministic under a fixed seed.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import NUM_CLASSES
from .checkpoint import Checkpoint
from .dataset import MapDataset
from .grid import GridSpec
from .metrics import ConfusionMatrix, miou
from .models.completion import predict_classes
from .models.network import MultiFrameModel, SingleFrameModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 2.0e-4
    weight_decay: float = 0.01
    batch_size: int = 2
    stage1_steps: int = 500
    stage2_steps: int = 300
    seed: int = 0
    frames: int = 3
    frame_offsets: tuple = (0, -5, -10)
    eval_every: int = 0        # 0 disables mIoU probes
    patience: int = 5          # probe evaluations without improvement before stopping
    target_miou: float = 0.0   # stop early once the probe mIoU reaches this
    log_every: int = 25
    lr_decay: float = 1.0      # multiplicative step decay of the learning rate
    lr_decay_every: int = 0    # 0 keeps the rate constant

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("rates must be nonnegative")
        if min(self.batch_size, self.stage1_steps, self.stage2_steps, self.frames) < 1:
            raise ValueError("counts must be positive")
        if len(self.frame_offsets) != self.frames:
            raise ValueError(
                f"{self.frames} frames need {self.frames} offsets, got {self.frame_offsets}"
            )
        if 0 not in self.frame_offsets:
            raise ValueError("frame offsets must include 0 (the current frame)")


@dataclass
class ModelConfig:
    grid: GridSpec
    channels: int = 128
    max_pillars: int = 4096
    max_points: int = 32

    def meta(self) -> dict:
        g = self.grid
        return {
            "grid": {
                "x_min": g.x_min, "x_max": g.x_max, "y_min": g.y_min, "y_max": g.y_max,
                "z_min": g.z_min, "z_max": g.z_max, "cell_size": g.cell_size,
                "height": g.height, "width": g.width,
            },
            "channels": self.channels,
            "max_pillars": self.max_pillars,
            "max_points": self.max_points,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "ModelConfig":
        g = meta["grid"]
        grid = GridSpec(g["x_min"], g["x_max"], g["y_min"], g["y_max"],
                        g["z_min"], g["z_max"], g["cell_size"], g["height"], g["width"])
        return cls(grid, meta["channels"], meta["max_pillars"], meta["max_points"])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list = field(default_factory=list)  # (step, loss, lr)


def segmentation_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross entropy over all cells; unknown (4) is a regular target class."""
    if targets.dtype not in (torch.int64, torch.int32, torch.uint8):
        raise ValueError(f"targets must be integer class ids, got {targets.dtype}")
    targets = targets.long()
    if targets.numel() and (targets.min() < 0 or targets.max() >= NUM_CLASSES):
        raise ValueError(
            f"target ids must lie in [0, {NUM_CLASSES - 1}], "
            f"got range [{targets.min()}, {targets.max()}]"
        )
    if logits.shape[-2:] != targets.shape[-2:]:
        logits = F.interpolate(logits, size=targets.shape[-2:], mode="bilinear", align_corners=False)
    return F.cross_entropy(logits, targets)


def build_single_model(mcfg: ModelConfig) -> SingleFrameModel:
    return SingleFrameModel(mcfg.grid, mcfg.channels)


def build_multi_model(mcfg: ModelConfig, frames: int, strategy: str = "pre") -> MultiFrameModel:
    return MultiFrameModel(mcfg.grid, mcfg.channels, frames, strategy)


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the trained model (single or multi) described by a checkpoint."""
    mcfg = ModelConfig.from_meta(ckpt.meta)
    if ckpt.meta.get("stage", 1) == 1:
        model = build_single_model(mcfg)
    else:
        model = build_multi_model(mcfg, ckpt.meta["frames"], ckpt.meta.get("strategy", "pre"))
    ckpt.apply_to_model(model)
    model.eval()
    return model, mcfg


def _write_history(history, log_path):
    if log_path is None:
        return
    with open(log_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "lr"])
        writer.writerows(history)


def _targets(dataset: MapDataset, indices) -> torch.Tensor:
    return torch.stack(
        [torch.as_tensor(dataset.class_map(i), dtype=torch.int64) for i in indices]
    )


def _check_finite(loss, step):
    if not torch.isfinite(loss):
        raise RuntimeError(
            f"training diverged: non-finite loss {loss.item()} at step {step}"
        )


@torch.no_grad()
def train_split_miou(model, dataset: MapDataset, indices=None, offsets=None) -> float:
    """Quick mIoU probe over dataset frames (used for stopping decisions)."""
    was_training = model.training
    model.eval()
    cm = ConfusionMatrix()
    hw = (dataset.grid.height, dataset.grid.width)
    for i in indices if indices is not None else range(len(dataset)):
        if offsets is None:
            logits = model([dataset.pillars(i)])
        else:
            ids = dataset.frame_window(i, offsets)
            logits = model([[dataset.pillars(j) for j in ids]], [[dataset.pose(j) for j in ids]])
        pred = predict_classes(logits[0], hw).numpy()
        cm.add(pred, dataset.class_map(i))
    if was_training:
        model.train()
    return miou(cm)


def _probe_indices(n: int, limit: int = 20):
    if n <= limit:
        return list(range(n))
    return list(np.linspace(0, n - 1, limit).astype(int))


def _run_loop(model, params, dataset, cfg: TrainConfig, steps, forward, log_path,
              keep_eval=()):
    opt = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    history = []
    probe = _probe_indices(len(dataset))
    best, since_best = -1.0, 0
    offsets = cfg.frame_offsets if isinstance(model, MultiFrameModel) else None
    for step in range(1, steps + 1):
        model.train()
        for mod in keep_eval:
            mod.eval()
        lr = cfg.learning_rate
        if cfg.lr_decay_every:
            lr *= cfg.lr_decay ** ((step - 1) // cfg.lr_decay_every)
            for group in opt.param_groups:
                group["lr"] = lr
        indices = rng.integers(0, len(dataset), size=cfg.batch_size)
        loss = forward(indices)
        _check_finite(loss, step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append((step, float(loss.item()), lr))
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.4f", step, loss.item())
        if cfg.eval_every and step % cfg.eval_every == 0:
            score = train_split_miou(model, dataset, probe, offsets)
            log.info("step %d probe mIoU %.4f", step, score)
            if cfg.target_miou and score >= cfg.target_miou:
                break
            if score > best + 1e-6:
                best, since_best = score, 0
            else:
                since_best += 1
                if cfg.patience and since_best >= cfg.patience:
                    break
    _write_history(history, log_path)
    model.eval()
    return opt, history


def train_stage1(dataset: MapDataset, cfg: TrainConfig, mcfg: ModelConfig,
                 log_path=None) -> TrainResult:
    """Optimize pillar encoder + completion net jointly on single frames."""
    torch.manual_seed(cfg.seed)
    model = build_single_model(mcfg)

    def forward(indices):
        logits = model([dataset.pillars(i) for i in indices])
        return segmentation_loss(logits, _targets(dataset, indices))

    opt, history = _run_loop(model, model.parameters(), dataset, cfg,
                             cfg.stage1_steps, forward, log_path)
    meta = {"stage": 1, "step": len(history), **mcfg.meta()}
    return TrainResult(Checkpoint.from_model(model, meta, opt), history)


def train_stage2(dataset: MapDataset, stage1: Checkpoint, cfg: TrainConfig,
                 strategy: str = "pre", log_path=None) -> TrainResult:
    """Insert the fusion module and train it with the completion net; the
    pillar encoder is frozen (no gradients, bit-identical parameters)."""
    mcfg = ModelConfig.from_meta(stage1.meta)
    torch.manual_seed(cfg.seed + 1)
    single = build_single_model(mcfg)
    stage1.apply_to_model(single)
    model = MultiFrameModel.from_single(single, cfg.frames, strategy)
    model.freeze_encoder = True
    model.pillar_encoder.requires_grad_(False)
    model.pillar_encoder.eval()
    params = [p for n, p in model.named_parameters() if not n.startswith("pillar_encoder.")]

    def forward(indices):
        frame_batches, poses, targets = [], [], []
        for i in indices:
            ids = dataset.frame_window(i, cfg.frame_offsets)
            frame_batches.append([dataset.pillars(j) for j in ids])
            poses.append([dataset.pose(j) for j in ids])
            targets.append(i)
        logits = model(frame_batches, poses)
        return segmentation_loss(logits, _targets(dataset, targets))

    opt, history = _run_loop(model, params, dataset, cfg, cfg.stage2_steps, forward,
                             log_path, keep_eval=(model.pillar_encoder,))
    meta = {
        "stage": 2, "step": len(history), "strategy": strategy,
        "frames": cfg.frames, "frame_offsets": list(cfg.frame_offsets),
        **mcfg.meta(),
    }
    return TrainResult(Checkpoint.from_model(model, meta, opt), history)
