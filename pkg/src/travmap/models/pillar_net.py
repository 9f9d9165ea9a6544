"""PointNet-lite pillar encoder and scatter-to-grid.

Per point: linear -> BatchNorm -> ReLU, then a masked max over the points
of each pillar. Padded points are excluded from the max via -inf
substitution; fully padded pillars output zeros.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..grid import GridSpec
from ..pillars import POINT_DIM, PillarBatch


class PillarEncoder(nn.Module):
    def __init__(self, channels: int = 128, in_dim: int = POINT_DIM, use_norm: bool = True):
        super().__init__()
        self.channels = channels
        self.linear = nn.Linear(in_dim, channels, bias=not use_norm)
        self.norm = nn.BatchNorm1d(channels) if use_norm else None
        self.relu = nn.ReLU()

    def _check_finite(self):
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise ValueError(f"non-finite values in encoder parameter {name}")

    def forward(self, points: torch.Tensor, point_mask: torch.Tensor, pillar_mask: torch.Tensor) -> torch.Tensor:
        """(P, N, D) points + masks -> (P, C) pillar features."""
        self._check_finite()
        P, N, D = points.shape
        x = self.linear(points.reshape(P * N, D))
        if self.norm is not None:
            x = self.norm(x)
        x = self.relu(x).reshape(P, N, self.channels)

        neg_inf = torch.finfo(x.dtype).min
        x = x.masked_fill(~point_mask.unsqueeze(-1), neg_inf)
        x = x.max(dim=1).values
        # pillars with no valid points (and padding pillars) collapse to zero
        has_points = point_mask.any(dim=1) & pillar_mask
        return x.masked_fill(~has_points.unsqueeze(-1), 0.0)


def scatter_pillars(features: torch.Tensor, coords, pillar_mask, g: GridSpec) -> torch.Tensor:
    """Place (P, C) pillar features at their cells -> (C, H, W) pseudo-image."""
    coords = torch.as_tensor(np.asarray(coords), dtype=torch.long)
    mask = torch.as_tensor(np.asarray(pillar_mask), dtype=torch.bool)
    rows, cols = coords[mask, 0], coords[mask, 1]
    if ((rows < 0) | (rows >= g.height) | (cols < 0) | (cols >= g.width)).any():
        raise ValueError("pillar coords out of grid bounds")
    lin = rows * g.width + cols
    if len(torch.unique(lin)) != len(lin):
        raise ValueError("duplicate pillar coords among valid pillars")
    out = features.new_zeros(features.shape[1], g.height, g.width)
    out[:, rows, cols] = features[mask].t()
    return out


def encode_scan_to_map(encoder: PillarEncoder, batch: PillarBatch, g: GridSpec,
                       dtype=torch.float32) -> torch.Tensor:
    """Pillar batch -> (C, H, W) feature map."""
    points = torch.as_tensor(batch.points, dtype=dtype)
    point_mask = torch.as_tensor(batch.point_mask)
    pillar_mask = torch.as_tensor(batch.pillar_mask)
    feats = encoder(points, point_mask, pillar_mask)
    return scatter_pillars(feats, batch.pillar_coords, batch.pillar_mask, g)
