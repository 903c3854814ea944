"""Two-stage co-attention that fuses same-level multi-view features.

Stage 1 runs separately on the angle-view triple and the distance-view
triple: the three maps are concatenated, compressed back to the working
width, and three attention factors are produced by chains of tensor
mode products (one learned square matrix per tensor mode) squashed by a
sigmoid. Each input map is gated by its factor and the gated maps are
summed. Stage 2 refines the angle branch with a channel gate (shared MLP
over global average/max pooling) followed by a spatial gate (7x7 conv over
the channel-wise mean/max maps); the refined angle tensor is concatenated
with the distance tensor and fused by a final convolution.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimMismatch


def mode_product(t: torch.Tensor, u: torch.Tensor, mode: int) -> torch.Tensor:
    """Multiply every mode-``mode`` fiber of ``t`` by the matrix ``u``.

    ``t`` is (C, H, W) or batched (B, C, H, W); modes 1, 2, 3 index C, H, W.
    ``u`` is (out, in) with ``in`` equal to t's size along the mode.
    """
    if u.dim() != 2:
        raise DimMismatch(f"mode matrix must be 2-D, got {tuple(u.shape)}")
    if mode not in (1, 2, 3):
        raise DimMismatch(f"mode must be 1, 2 or 3, got {mode}")
    squeeze = t.dim() == 3
    x = t.unsqueeze(0) if squeeze else t
    if x.dim() != 4:
        raise DimMismatch(f"tensor must be 3-D or 4-D, got {t.dim()}-D")
    if u.shape[1] != x.shape[mode]:
        raise DimMismatch(
            f"mode-{mode} size {x.shape[mode]} does not match matrix columns {u.shape[1]}"
        )
    eq = {1: "oc,bchw->bohw", 2: "oh,bchw->bcow", 3: "ow,bchw->bcho"}[mode]
    out = torch.einsum(eq, u, x)
    return out.squeeze(0) if squeeze else out


class ModeAttention(nn.Module):
    """sigmoid(t x1 U1 x2 U2 x3 U3) with one square matrix per mode."""

    def __init__(self, channels, height, width):
        super().__init__()
        self.u1 = nn.Parameter(torch.empty(channels, channels))
        self.u2 = nn.Parameter(torch.empty(height, height))
        self.u3 = nn.Parameter(torch.empty(width, width))
        for u in (self.u1, self.u2, self.u3):
            nn.init.normal_(u, std=1.0 / math.sqrt(u.shape[1]))

    def forward(self, t):
        out = mode_product(t, self.u1, 1)
        out = mode_product(out, self.u2, 2)
        out = mode_product(out, self.u3, 3)
        return torch.sigmoid(out)


class IntraAttention(nn.Module):
    """Stage-1 fusion of three same-shape view features into one map."""

    def __init__(self, channels, height, width):
        super().__init__()
        self.compress = nn.Conv2d(3 * channels, channels, 3, padding=1)
        self.factors = nn.ModuleList(
            ModeAttention(channels, height, width) for _ in range(3)
        )

    def forward(self, fa, fb, fc):
        if fa.shape != fb.shape or fa.shape != fc.shape:
            raise DimMismatch(
                f"view features disagree: {tuple(fa.shape)}, {tuple(fb.shape)}, {tuple(fc.shape)}"
            )
        base = F.relu(self.compress(torch.cat([fa, fb, fc], dim=-3)))
        ua, ub, uc = (factor(base) for factor in self.factors)
        return fa * ua + fb * ub + fc * uc


class ChannelGate(nn.Module):
    """Gate each channel by a shared MLP over global average and max pooling."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1),
        )

    def forward(self, x):
        squeeze = x.dim() == 3
        t = x.unsqueeze(0) if squeeze else x
        avg = self.mlp(F.adaptive_avg_pool2d(t, 1))
        mx = self.mlp(F.adaptive_max_pool2d(t, 1))
        out = t * torch.sigmoid(avg + mx)
        return out.squeeze(0) if squeeze else out


class SpatialGate(nn.Module):
    """Gate each position by a conv over the channel-wise mean and max maps."""

    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        squeeze = x.dim() == 3
        t = x.unsqueeze(0) if squeeze else x
        mean_map = t.mean(dim=1, keepdim=True)
        max_map = t.max(dim=1, keepdim=True).values
        gate = torch.sigmoid(self.conv(torch.cat([mean_map, max_map], dim=1)))
        out = t * gate
        return out.squeeze(0) if squeeze else out


@dataclass
class MvTensor:
    """Aligned same-level features: (angle1, angle2, original) and
    (dist1, dist2, original), all C x H x W."""

    angle: tuple
    dist: tuple


class Camv(nn.Module):
    """Per-level co-attention; each pyramid level gets its own instance
    because the mode matrices are sized to that level's resolution."""

    def __init__(self, channels, height, width, stage2=True, reduction=4, spatial_kernel=7):
        super().__init__()
        self.stage2 = stage2
        self.angle_att = IntraAttention(channels, height, width)
        self.dist_att = IntraAttention(channels, height, width)
        self.channel_gate = ChannelGate(channels, reduction)
        self.spatial_gate = SpatialGate(spatial_kernel)
        self.fusion = nn.Conv2d(2 * channels, channels, 3, padding=1)

    def forward(self, mv: MvTensor) -> torch.Tensor:
        f_ang = self.angle_att(*mv.angle)
        f_dist = self.dist_att(*mv.dist)
        if self.stage2:
            f_ang = self.spatial_gate(self.channel_gate(f_ang))
        return self.fusion(torch.cat([f_ang, f_dist], dim=-3))


def camv_fuse(mv: MvTensor, module: Camv, stage2=None) -> torch.Tensor:
    """Functional wrapper; ``stage2`` optionally overrides the module flag."""
    if stage2 is not None and stage2 != module.stage2:
        prev, module.stage2 = module.stage2, stage2
        try:
            return module(mv)
        finally:
            module.stage2 = prev
    return module(mv)
