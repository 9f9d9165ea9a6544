"""Multi-frame alignment and attention fusion.

Past feature maps are aligned to the current frame with a planar rigid
warp (yaw + x-y translation only), then fused with frame-normalized
channel and spatial attention followed by a 1x1 convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from ..grid import GridSpec

RIGID_TOL = 1e-4


@dataclass(frozen=True)
class PlanarTransform:
    """2x3 matrix mapping target-frame pixel coords [u, v, 1] to source pixels."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3) or not np.isfinite(m).all():
            raise ValueError(f"planar transform must be a finite 2x3 matrix, got {m}")
        r = m[:, :2]
        if np.abs(r @ r.T - np.eye(2)).max() > RIGID_TOL or np.linalg.det(r) < 0:
            raise ValueError("planar transform's 2x2 block is not a proper rotation")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "PlanarTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def inverse(self) -> "PlanarTransform":
        r = self.matrix[:, :2]
        t = self.matrix[:, 2]
        return PlanarTransform(np.concatenate([r.T, (-r.T @ t)[:, None]], axis=1))


def _check_rigid(pose: np.ndarray):
    rot = np.asarray(pose)[:3, :3]
    if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-3 or np.linalg.det(rot) < 0:
        raise ValueError("pose is not a rigid transform")


def relative_transform(pose_src: np.ndarray, pose_dst: np.ndarray, g: GridSpec) -> PlanarTransform:
    """Pixel-space planar transform that samples frame `pose_src` onto `pose_dst`'s grid.

    Keeps yaw and x-y translation of the relative motion (z, roll and pitch
    are dropped). The result maps destination-frame pixel coordinates to
    source-frame sampling coordinates.
    """
    _check_rigid(pose_src)
    _check_rigid(pose_dst)
    rel = np.linalg.inv(pose_src) @ pose_dst  # dst-frame metric -> src-frame metric
    yaw = np.arctan2(rel[1, 0] - rel[0, 1], rel[0, 0] + rel[1, 1])
    c, s = np.cos(yaw), np.sin(yaw)
    planar = np.array([[c, -s, rel[0, 3]], [s, c, rel[1, 3]], [0.0, 0.0, 1.0]])

    # pixel -> metric: x = x_min + (u + 0.5) * cell, y likewise for v
    cell = g.cell_size
    to_metric = np.array([[cell, 0.0, g.x_min + cell / 2], [0.0, cell, g.y_min + cell / 2], [0.0, 0.0, 1.0]])
    to_pixel = np.linalg.inv(to_metric)
    return PlanarTransform((to_pixel @ planar @ to_metric)[:2, :])


def warp(feature: torch.Tensor, transform: PlanarTransform) -> torch.Tensor:
    """Bilinear resample of a (..., C, H, W) map; outside samples contribute zero.

    Differentiable with respect to the feature map. Exact (bit-equal) for
    the identity transform.
    """
    h = torch.as_tensor(transform.matrix, dtype=feature.dtype, device=feature.device)
    H, W = feature.shape[-2:]
    v, u = torch.meshgrid(
        torch.arange(H, dtype=feature.dtype, device=feature.device),
        torch.arange(W, dtype=feature.dtype, device=feature.device),
        indexing="ij",
    )
    su = h[0, 0] * u + h[0, 1] * v + h[0, 2]
    sv = h[1, 0] * u + h[1, 1] * v + h[1, 2]

    u0 = torch.floor(su)
    v0 = torch.floor(sv)
    fu = su - u0
    fv = sv - v0

    flat = feature.reshape(-1, H * W)  # (C', H*W)
    out = torch.zeros_like(flat).reshape(flat.shape[0], H, W)
    for dv, du, w in (
        (0, 0, (1 - fu) * (1 - fv)),
        (0, 1, fu * (1 - fv)),
        (1, 0, (1 - fu) * fv),
        (1, 1, fu * fv),
    ):
        uc = u0 + du
        vc = v0 + dv
        inside = (uc >= 0) & (uc < W) & (vc >= 0) & (vc < H)
        lin = (vc.clamp(0, H - 1) * W + uc.clamp(0, W - 1)).long().reshape(-1)
        vals = flat[:, lin].reshape(flat.shape[0], H, W)
        out = out + torch.where(inside, w, torch.zeros_like(w)) * vals
    return out.reshape(feature.shape)


def channel_attention(stack: torch.Tensor) -> torch.Tensor:
    """Frame-normalized channel weights for a (K, C, H, W) stack -> (K, C, 1, 1).

    Half softmax-over-frames of the spatial averages, half of the spatial
    maxima; per channel the weights sum to one across frames.
    """
    K, C = stack.shape[0], stack.shape[1]
    avg = stack.mean(dim=(2, 3))                  # (K, C)
    mx = stack.amax(dim=(2, 3))                   # (K, C)
    weights = 0.5 * (torch.softmax(avg, dim=0) + torch.softmax(mx, dim=0))
    return weights.reshape(K, C, 1, 1)


class FusionModule(nn.Module):
    """Channel + spatial attention over K aligned frames, then 1x1 fusion conv."""

    def __init__(self, channels: int, frames: int = 3):
        super().__init__()
        if frames < 1:
            raise ValueError("frames must be >= 1")
        self.channels = channels
        self.frames = frames
        self.spatial_conv = nn.Conv2d(2, 1, kernel_size=7, padding=3, bias=False)
        self.fuse_conv = nn.Conv2d(frames * channels, channels, kernel_size=1)

    def init_identity(self):
        """Initialize the 1x1 conv so fusing K copies of a map returns that map."""
        with torch.no_grad():
            w = torch.zeros_like(self.fuse_conv.weight)
            eye = torch.eye(self.channels, dtype=w.dtype)
            for k in range(self.frames):
                w[:, k * self.channels : (k + 1) * self.channels, 0, 0] = eye
            self.fuse_conv.weight.copy_(w)
            self.fuse_conv.bias.zero_()
        return self

    def spatial_attention(self, stack: torch.Tensor) -> torch.Tensor:
        """(K, C, H, W) -> per-frame spatial weights (K, 1, H, W), softmax over frames."""
        pooled = torch.cat([stack.mean(dim=1, keepdim=True), stack.amax(dim=1, keepdim=True)], dim=1)
        scores = self.spatial_conv(pooled)  # (K, 1, H, W), conv shared across frames
        return torch.softmax(scores, dim=0)

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        """Fuse a (K, C, H, W) stack of aligned frames into one (C, H, W) map."""
        if stack.shape[0] != self.frames:
            raise ValueError(f"expected {self.frames} frames, got {stack.shape[0]}")
        cw = channel_attention(stack)
        weighted = cw * stack
        sw = self.spatial_attention(weighted)
        weighted = sw * weighted
        merged = weighted.reshape(1, self.frames * self.channels, *stack.shape[-2:])
        return self.fuse_conv(merged)[0]
