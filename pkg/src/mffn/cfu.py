"""Channel fusion: chunk-chain interaction, progressive iteration, decoding.

The enhanced per-level feature map is projected to a width divisible by the
chunk count, split along channels, and fused chunk-by-chunk: each step
convolves the running result, concatenates the next chunk, applies a learned
channel-mode matrix and projects back to chunk width. The reassembled map is
refined by a fixed number of residual-anchored conv-BN-ReLU-conv iterations.
A coarse-to-fine decoder then upsamples, concatenates and fuses the levels
into a single-channel logits map at the input resolution.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .camv import mode_product
from .errors import DimMismatch, IndivisibleChannels, LevelShapeMismatch, TooFewChunks


def split_chunks(f: torch.Tensor, j: int):
    """Split (..., C, H, W) into ``j`` contiguous channel chunks; exact partition."""
    channels = f.shape[-3]
    if j < 1 or channels % j:
        raise IndivisibleChannels(f"{channels} channels cannot split into {j} equal chunks")
    return list(torch.split(f, channels // j, dim=-3))


class ClipStep(nn.Module):
    """One chunk interaction: conv the carry, concatenate the next chunk,
    mix channels with a learned matrix, project back to chunk width."""

    def __init__(self, chunk_channels):
        super().__init__()
        self.conv = nn.Conv2d(chunk_channels, chunk_channels, 3, padding=1)
        self.mix = nn.Parameter(torch.empty(2 * chunk_channels, 2 * chunk_channels))
        nn.init.normal_(self.mix, std=1.0 / (2 * chunk_channels) ** 0.5)
        self.proj = nn.Conv2d(2 * chunk_channels, chunk_channels, 1)

    def forward(self, f_next, f_prev):
        if f_next.shape != f_prev.shape:
            raise DimMismatch(f"chunk shapes differ: {tuple(f_next.shape)} vs {tuple(f_prev.shape)}")
        z = torch.cat([f_next, self.conv(f_prev)], dim=-3)
        z = mode_product(z, self.mix, 1)
        return self.proj(z)


def run_clip(chunks, steps):
    """Fold the chunk list through the interaction steps.

    Step k consumes chunk k+1 and the previous step's output; the results are
    reassembled as [first chunk, step outputs...], restoring the input width.
    """
    if len(chunks) < 2:
        raise TooFewChunks(f"chunk interaction needs at least 2 chunks, got {len(chunks)}")
    if len(steps) != len(chunks) - 1:
        raise DimMismatch(f"{len(chunks)} chunks need {len(chunks) - 1} steps, got {len(steps)}")
    outs = [chunks[0]]
    carry = chunks[0]
    for step, nxt in zip(steps, chunks[1:]):
        carry = step(nxt, carry)
        outs.append(carry)
    return torch.cat(outs, dim=-3)


class Cbr(nn.Module):
    """conv3x3 - BN - ReLU - conv3x3, channel preserving."""

    def __init__(self, channels, out_channels=None):
        super().__init__()
        out_channels = out_channels or channels
        self.body = nn.Sequential(
            nn.Conv2d(channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
        )

    def forward(self, x):
        squeeze = x.dim() == 3
        out = self.body(x.unsqueeze(0) if squeeze else x)
        return out.squeeze(0) if squeeze else out


class Opi(nn.Module):
    """Residual-anchored refinement: z0 = CBR(z); z_{s+1} = CBR(z_s + z0).

    Each iteration has its own CBR block (the loop is unrolled), so the step
    count is fixed at construction; ``forward`` may run fewer steps.
    """

    def __init__(self, channels, steps=4):
        super().__init__()
        if steps < 1:
            raise DimMismatch(f"iteration count must be >= 1, got {steps}")
        self.steps = steps
        self.blocks = nn.ModuleList(Cbr(channels) for _ in range(steps + 1))

    def forward(self, z, steps=None):
        steps = self.steps if steps is None else steps
        if not 1 <= steps <= self.steps:
            raise DimMismatch(f"steps must lie in [1, {self.steps}], got {steps}")
        z0 = self.blocks[0](z)
        cur = z0
        for s in range(steps):
            cur = self.blocks[s + 1](cur + z0)
        return cur


class CfuBlock(nn.Module):
    """Per-level channel fusion: projection to a divisible width, chunk-chain
    interaction, then progressive iteration. Output width is ``padded_channels``."""

    def __init__(self, channels=64, groups=3, opi_steps=4):
        super().__init__()
        if groups < 2:
            raise TooFewChunks(f"channel fusion needs at least 2 groups, got {groups}")
        self.groups = groups
        self.padded_channels = channels + (-channels) % groups
        self.proj = nn.Sequential(
            nn.Conv2d(channels, self.padded_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(self.padded_channels),
            nn.ReLU(inplace=True),
        )
        chunk = self.padded_channels // groups
        self.clip_steps = nn.ModuleList(ClipStep(chunk) for _ in range(groups - 1))
        self.opi = Opi(self.padded_channels, opi_steps)

    def forward(self, f):
        squeeze = f.dim() == 3
        x = self.proj(f.unsqueeze(0) if squeeze else f)
        z = run_clip(split_chunks(x, self.groups), self.clip_steps)
        out = self.opi(z)
        return out.squeeze(0) if squeeze else out


class Decoder(nn.Module):
    """Coarse-to-fine progressive upsampling into a 1-channel logits map.

    Each stage doubles the resolution, concatenates the next finer level and
    fuses with a conv-BN-ReLU-conv unit; a final doubling and 1x1 head restore
    the input image resolution.
    """

    def __init__(self, in_channels=64, mid_channels=64):
        super().__init__()
        self.in_channels = in_channels
        self.fuse = nn.ModuleList(
            [Cbr(2 * in_channels, mid_channels)]
            + [Cbr(mid_channels + in_channels, mid_channels) for _ in range(3)]
        )
        self.head = nn.Conv2d(mid_channels, 1, 1)

    def forward(self, levels, out_hw=None):
        if len(levels) != 5:
            raise LevelShapeMismatch(f"decoder expects 5 levels, got {len(levels)}")
        squeeze = levels[0].dim() == 3
        feats = [lv.unsqueeze(0) if squeeze else lv for lv in levels]
        for i, lv in enumerate(feats):
            if lv.shape[-3] != self.in_channels:
                raise LevelShapeMismatch(
                    f"level {i + 1} has {lv.shape[-3]} channels, expected {self.in_channels}"
                )
        for fine, coarse in zip(feats, feats[1:]):
            eh, ew = 2 * coarse.shape[-2], 2 * coarse.shape[-1]
            if (fine.shape[-2], fine.shape[-1]) != (eh, ew):
                raise LevelShapeMismatch(
                    f"level sizes {tuple(fine.shape[-2:])} vs {tuple(coarse.shape[-2:])}"
                    " do not halve"
                )
        x = feats[-1]
        for fuse, finer in zip(self.fuse, reversed(feats[:-1])):
            x = F.interpolate(x, size=finer.shape[-2:], mode="bilinear", align_corners=False)
            x = fuse(torch.cat([x, finer], dim=1))
        if out_hw is None:
            out_hw = (2 * feats[0].shape[-2], 2 * feats[0].shape[-1])
        x = F.interpolate(x, size=tuple(out_hw), mode="bilinear", align_corners=False)
        logits = self.head(x)
        return logits.squeeze(0) if squeeze else logits
