"""Encoder-decoder completion network over the BEV feature map.

The encoder is a stack of residual dilated blocks: each block splits its
width into two 3x3 convolution groups with separate dilation rates, gates
the concatenated result with squeeze-excitation, and projects back with a
1x1 convolution. Taps at 1/4, 1/8 and 1/16 resolution feed a light
three-branch decoder that emits 5-class logits at 1/4 resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .. import NUM_CLASSES

SE_REDUCTION = 4

# (out_channels, stride, (d1, d2)); taps follow the 96, the last 128 and
# the 320 block, landing at 1/4, 1/8 and 1/16 resolution.
ENCODER_PLAN = (
    (64, 2, (1, 1)),
    (96, 2, (1, 1)),    # tap: quarter
    (128, 2, (1, 1)),
    (128, 1, (1, 1)),
    (128, 1, (1, 1)),   # tap: eighth
    (256, 2, (1, 1)),
    (256, 1, (1, 1)),
    (256, 1, (1, 2)),
    (256, 1, (1, 4)),
    (256, 1, (1, 4)),
    (256, 1, (1, 4)),
    (256, 1, (1, 4)),
    (256, 1, (1, 14)),
    (256, 1, (1, 14)),
    (256, 1, (1, 14)),
    (256, 1, (1, 14)),
    (256, 1, (1, 14)),
    (256, 1, (1, 14)),
    (320, 1, (1, 14)),  # tap: sixteenth
)
TAP_INDICES = (1, 4, 18)


@dataclass(frozen=True)
class DilatedBlockSpec:
    in_channels: int
    out_channels: int
    dilations: tuple
    stride: int = 1

    def __post_init__(self):
        if self.out_channels % 2:
            raise ValueError("out_channels must be even (two dilation groups)")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if self.out_channels // SE_REDUCTION < 1:
            raise ValueError("out_channels too small for squeeze-excitation bottleneck")


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        hidden = channels // SE_REDUCTION
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        gate = x.mean(dim=(-2, -1))
        gate = torch.sigmoid(self.fc2(F.relu(self.fc1(gate))))
        return x * gate.unsqueeze(-1).unsqueeze(-1)


class DilatedBlock(nn.Module):
    """Residual block with a two-group dilated 3x3 stage and SE gating."""

    def __init__(self, spec: DilatedBlockSpec):
        super().__init__()
        self.spec = spec
        cin, cout = spec.in_channels, spec.out_channels
        half = cout // 2
        d1, d2 = spec.dilations

        self.conv_in = nn.Conv2d(cin, cout, 1, bias=False)
        self.bn_in = nn.BatchNorm2d(cout)
        self.conv_d1 = nn.Conv2d(half, half, 3, stride=spec.stride, padding=d1, dilation=d1, bias=False)
        self.conv_d2 = nn.Conv2d(half, half, 3, stride=spec.stride, padding=d2, dilation=d2, bias=False)
        self.bn_mid = nn.BatchNorm2d(cout)
        self.se = SqueezeExcite(cout)
        self.conv_out = nn.Conv2d(cout, cout, 1, bias=False)
        self.bn_out = nn.BatchNorm2d(cout)

        if spec.stride == 2:
            self.shortcut = nn.Sequential(
                nn.AvgPool2d(2, stride=2, ceil_mode=True),
                nn.Conv2d(cin, cout, 1, bias=False),
            )
        elif cin != cout:
            self.shortcut = nn.Conv2d(cin, cout, 1, bias=False)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        if x.shape[-3] != self.spec.in_channels:
            raise ValueError(
                f"expected {self.spec.in_channels} input channels, got {x.shape[-3]}"
            )
        half = self.spec.out_channels // 2
        y = F.relu(self.bn_in(self.conv_in(x)))
        y = torch.cat([self.conv_d1(y[:, :half]), self.conv_d2(y[:, half:])], dim=1)
        y = F.relu(self.bn_mid(y))
        y = self.se(y)
        y = self.bn_out(self.conv_out(y))
        return F.relu(y + self.shortcut(x))


class Encoder(nn.Module):
    def __init__(self, in_channels: int = 128, plan=ENCODER_PLAN, tap_indices=TAP_INDICES):
        super().__init__()
        self.tap_indices = tuple(tap_indices)
        blocks = []
        cin = in_channels
        for cout, stride, dil in plan:
            blocks.append(DilatedBlock(DilatedBlockSpec(cin, cout, tuple(dil), stride)))
            cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.in_channels = in_channels
        self.tap_channels = tuple(plan[i][0] for i in self.tap_indices)

    def forward(self, x):
        """(B, C, H, W) -> taps at 1/4, 1/8 and 1/16 resolution."""
        if x.shape[-1] % 16 or x.shape[-2] % 16:
            raise ValueError(f"input resolution {x.shape[-2:]} not divisible by 16")
        taps = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i in self.tap_indices:
                taps.append(x)
        return tuple(taps)


class Decoder(nn.Module):
    def __init__(self, tap_channels=(96, 128, 320), mid: int = 128, low: int = 8,
                 fuse: int = 64, num_classes: int = NUM_CLASSES):
        super().__init__()
        c4, c8, c16 = tap_channels

        def conv_bn(cin, cout, k):
            return nn.Sequential(
                nn.Conv2d(cin, cout, k, padding=k // 2, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(),
            )

        self.proj16 = conv_bn(c16, mid, 1)
        self.proj8 = conv_bn(c8, mid, 1)
        self.proj4 = conv_bn(c4, low, 1)
        self.conv8 = conv_bn(mid, fuse, 3)
        self.conv4 = conv_bn(fuse + low, fuse, 3)
        self.head = nn.Conv2d(fuse, num_classes, 1)

    @staticmethod
    def _up2(x):
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

    def forward(self, taps):
        """Encoder taps -> (B, num_classes, H/4, W/4) logits."""
        m4, m8, m16 = taps
        y = self.proj8(m8) + self._up2(self.proj16(m16))
        y = self.conv8(y)
        y = torch.cat([self._up2(y), self.proj4(m4)], dim=1)
        y = self.conv4(y)
        return self.head(y)


class CompletionNet(nn.Module):
    """Full encoder-decoder: (B, C, H, W) feature map -> (B, 5, H/4, W/4) logits."""

    def __init__(self, in_channels: int = 128, plan=ENCODER_PLAN, tap_indices=TAP_INDICES,
                 decoder_mid: int = 128, decoder_low: int = 8, decoder_fuse: int = 64):
        super().__init__()
        self.encoder = Encoder(in_channels, plan, tap_indices)
        self.decoder = Decoder(self.encoder.tap_channels, decoder_mid, decoder_low, decoder_fuse)

    def forward(self, x):
        return self.decoder(self.encoder(x))


def micro_plan(width: int = 8):
    """Tiny encoder plan with the same stride/tap layout, for gradient checks."""
    plan = tuple((width, stride, dil) for _, stride, dil in ENCODER_PLAN[:7])
    return plan, (1, 4, 6)


def upsample_logits(logits: torch.Tensor, size) -> torch.Tensor:
    return F.interpolate(logits, size=size, mode="bilinear", align_corners=False)


def predict_classes(logits: torch.Tensor, out_hw) -> torch.Tensor:
    """Logits at 1/4 resolution -> (H, W) class ids; ties go to the lower id."""
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
    full = upsample_logits(logits, out_hw)
    return full.argmax(dim=1).squeeze(0)
