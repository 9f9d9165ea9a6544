"""Full single- and multi-frame pipelines.

The multi-frame model supports three fusion placements:
  pre:  warp feature maps, attention-fuse, then run completion once
  in:   warp feature maps, run completion per frame, fuse the logits
  post: run completion per frame in its own frame, warp the logits, fuse
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .. import NUM_CLASSES
from ..grid import GridSpec
from ..pillars import PillarBatch, pillarize
from .completion import CompletionNet
from .fusion import FusionModule, relative_transform, warp
from .pillar_net import PillarEncoder, encode_scan_to_map

STRATEGIES = ("pre", "in", "post")


class SingleFrameModel(nn.Module):
    def __init__(self, grid: GridSpec, channels: int = 128, plan=None, tap_indices=None,
                 decoder_mid: int = 128, decoder_low: int = 8, decoder_fuse: int = 64):
        super().__init__()
        self.grid = grid
        self.channels = channels
        self.pillar_encoder = PillarEncoder(channels)
        kwargs = {}
        if plan is not None:
            kwargs["plan"] = plan
        if tap_indices is not None:
            kwargs["tap_indices"] = tap_indices
        self.completion = CompletionNet(
            channels, decoder_mid=decoder_mid, decoder_low=decoder_low,
            decoder_fuse=decoder_fuse, **kwargs,
        )

    def feature_map(self, batch: PillarBatch) -> torch.Tensor:
        return encode_scan_to_map(self.pillar_encoder, batch, self.grid)

    def forward(self, batches: list) -> torch.Tensor:
        """Pillar batches -> (B, 5, H/4, W/4) logits."""
        maps = torch.stack([self.feature_map(b) for b in batches])
        return self.completion(maps)


class MultiFrameModel(nn.Module):
    def __init__(self, grid: GridSpec, channels: int = 128, frames: int = 3,
                 strategy: str = "pre", pillar_encoder: PillarEncoder = None,
                 completion: CompletionNet = None):
        super().__init__()
        if strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
        self.grid = grid
        self.quarter_grid = grid.downscale(4)
        self.channels = channels
        self.frames = frames
        self.strategy = strategy
        self.freeze_encoder = False
        self.pillar_encoder = pillar_encoder or PillarEncoder(channels)
        self.completion = completion or CompletionNet(channels)
        fusion_channels = channels if strategy == "pre" else NUM_CLASSES
        self.fusion = FusionModule(fusion_channels, frames).init_identity()

    @classmethod
    def from_single(cls, single: SingleFrameModel, frames: int = 3, strategy: str = "pre"):
        return cls(single.grid, single.channels, frames, strategy,
                   pillar_encoder=single.pillar_encoder, completion=single.completion)

    def _frame_maps(self, frame_batches: list) -> list:
        if self.freeze_encoder:
            with torch.no_grad():
                return [self.feature_map(b).detach() for b in frame_batches]
        return [self.feature_map(b) for b in frame_batches]

    def feature_map(self, batch: PillarBatch) -> torch.Tensor:
        return encode_scan_to_map(self.pillar_encoder, batch, self.grid)

    def _transforms(self, poses: list, grid: GridSpec) -> list:
        current = np.asarray(poses[0])
        return [relative_transform(np.asarray(p), current, grid) for p in poses]

    def forward(self, frame_batches: list, poses: list) -> torch.Tensor:
        """Per sample: K pillar batches + K poses (current first) -> (B, 5, h, w) logits."""
        logits = []
        for batches, sample_poses in zip(frame_batches, poses):
            if len(batches) != self.frames or len(sample_poses) != self.frames:
                raise ValueError(f"expected {self.frames} frames per sample")
            maps = self._frame_maps(batches)
            if self.strategy == "pre":
                tf = self._transforms(sample_poses, self.grid)
                stack = torch.stack([warp(m, t) for m, t in zip(maps, tf)])
                fused = self.fusion(stack)
                logits.append(self.completion(fused.unsqueeze(0))[0])
            elif self.strategy == "in":
                tf = self._transforms(sample_poses, self.grid)
                stack = torch.stack([warp(m, t) for m, t in zip(maps, tf)])
                per_frame = self.completion(stack)
                logits.append(self.fusion(per_frame))
            else:  # post
                per_frame = self.completion(torch.stack(maps))
                tf = self._transforms(sample_poses, self.quarter_grid)
                stack = torch.stack([warp(f, t) for f, t in zip(per_frame, tf)])
                logits.append(self.fusion(stack))
        return torch.stack(logits)


def pillarize_scan(cloud: np.ndarray, grid: GridSpec, max_pillars: int, max_points: int,
                   rng_seed: int = 0) -> PillarBatch:
    return pillarize(cloud, grid, max_pillars, max_points, rng_seed)
