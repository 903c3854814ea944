"""Shared residual backbone with a feature-pyramid neck.

Every view runs through the same parameter set and comes out as five
feature levels of uniform width (64 channels) at strides 2, 4, 8, 16 and
32, ordered fine to coarse. For a 384x384 input the level sizes are
192, 96, 48, 24 and 12.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoints
from .errors import ArchMismatch, IndivisibleInput

OUT_CHANNELS = 64
NUM_LEVELS = 5


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_ch, ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(ch)
        self.downsample = None
        if stride != 1 or in_ch != ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, ch, 1, stride=stride, bias=False), nn.BatchNorm2d(ch)
            )

    def forward(self, x):
        identity = self.downsample(x) if self.downsample is not None else x
        out = F.relu(self.bn1(self.conv1(x)), inplace=True)
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity, inplace=True)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch, ch, stride=1):
        super().__init__()
        out_ch = ch * self.expansion
        self.conv1 = nn.Conv2d(in_ch, ch, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(ch)
        self.conv3 = nn.Conv2d(ch, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), nn.BatchNorm2d(out_ch)
            )

    def forward(self, x):
        identity = self.downsample(x) if self.downsample is not None else x
        out = F.relu(self.bn1(self.conv1(x)), inplace=True)
        out = F.relu(self.bn2(self.conv2(out)), inplace=True)
        out = self.bn3(self.conv3(out))
        return F.relu(out + identity, inplace=True)


_DEPTHS = {
    18: (BasicBlock, (2, 2, 2, 2), 64),
    34: (BasicBlock, (3, 4, 6, 3), 64),
    50: (Bottleneck, (3, 4, 6, 3), 64),
    # Width-reduced single-block profile for desk-scale tests.
    "tiny": (BasicBlock, (1, 1, 1, 1), 16),
}


@dataclass
class EncoderConfig:
    depth: object = 50
    fpn_channels: int = 256
    out_channels: int = OUT_CHANNELS
    weights: str | None = field(default=None)


class ResNetBackbone(nn.Module):
    """Standard residual trunk exposing taps at strides 2, 4, 8, 16, 32."""

    def __init__(self, depth=50):
        super().__init__()
        if depth not in _DEPTHS:
            raise ArchMismatch(f"unsupported depth {depth!r}; known: {sorted(map(str, _DEPTHS))}")
        block, layers, stem = _DEPTHS[depth]
        self.conv1 = nn.Conv2d(3, stem, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(stem)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        ch = stem
        self.layer1, ch = self._stage(block, ch, stem, layers[0], stride=1)
        self.layer2, ch = self._stage(block, ch, stem * 2, layers[1], stride=2)
        self.layer3, ch = self._stage(block, ch, stem * 4, layers[2], stride=2)
        self.layer4, ch = self._stage(block, ch, stem * 8, layers[3], stride=2)
        self.tap_channels = (stem, stem * block.expansion, stem * 2 * block.expansion,
                             stem * 4 * block.expansion, stem * 8 * block.expansion)
        self._init_weights()

    @staticmethod
    def _stage(block, in_ch, ch, n, stride):
        blocks = [block(in_ch, ch, stride=stride)]
        out_ch = ch * block.expansion
        blocks += [block(out_ch, ch) for _ in range(n - 1)]
        return nn.Sequential(*blocks), out_ch

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def forward(self, x):
        c1 = F.relu(self.bn1(self.conv1(x)), inplace=True)
        c2 = self.layer1(self.maxpool(c1))
        c3 = self.layer2(c2)
        c4 = self.layer3(c3)
        c5 = self.layer4(c4)
        return [c1, c2, c3, c4, c5]


class FpnNeck(nn.Module):
    """Top-down pyramid: 1x1 laterals, upsample-and-add, 3x3 smoothing, then
    a conv-BN-ReLU adapter bringing every level to the shared output width."""

    def __init__(self, tap_channels, channels=256, out_channels=OUT_CHANNELS):
        super().__init__()
        self.laterals = nn.ModuleList(nn.Conv2d(c, channels, 1) for c in tap_channels)
        self.smooth = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=1) for _ in tap_channels
        )
        self.adapt = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(channels, out_channels, 3, padding=1, bias=False),
                nn.BatchNorm2d(out_channels),
                nn.ReLU(inplace=True),
            )
            for _ in tap_channels
        )

    def forward(self, taps):
        lat = [l(t) for l, t in zip(self.laterals, taps)]
        for i in range(len(lat) - 2, -1, -1):
            lat[i] = lat[i] + F.interpolate(
                lat[i + 1], size=lat[i].shape[-2:], mode="bilinear", align_corners=False
            )
        return [a(s(p)) for a, s, p in zip(self.adapt, self.smooth, lat)]


class Encoder(nn.Module):
    """Backbone plus neck; ``forward`` returns the 5-level feature pyramid."""

    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        self.config = config or EncoderConfig()
        self.backbone = ResNetBackbone(self.config.depth)
        self.neck = FpnNeck(
            self.backbone.tap_channels, self.config.fpn_channels, self.config.out_channels
        )
        if self.config.weights:
            self.load_backbone_weights(self.config.weights)

    def load_backbone_weights(self, path):
        state = checkpoints.load_state(path)
        own = self.backbone.state_dict()
        filtered = {}
        for name, tensor in state.items():
            name = name.removeprefix("backbone.")
            if name not in own:
                continue
            if tuple(own[name].shape) != tuple(tensor.shape):
                raise ArchMismatch(
                    f"{name}: stored shape {tuple(tensor.shape)} != model {tuple(own[name].shape)}"
                )
            filtered[name] = tensor
        if not filtered:
            raise ArchMismatch(f"no backbone tensors found in {path}")
        self.backbone.load_state_dict(filtered, strict=False)

    def forward(self, img: torch.Tensor):
        squeeze = img.dim() == 3
        x = img.unsqueeze(0) if squeeze else img
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise IndivisibleInput(f"input size {h}x{w} is not divisible by 32")
        levels = self.neck(self.backbone(x))
        if squeeze:
            levels = [lv.squeeze(0) for lv in levels]
        return levels

    encode = forward


def build_encoder(config: EncoderConfig | None = None) -> Encoder:
    return Encoder(config)


def encode_views(encoder: Encoder, view_tensors: dict) -> dict:
    """Run every view through the same encoder; returns kind -> pyramid."""
    return {kind: encoder(t) for kind, t in view_tensors.items()}


def level_sizes(image_size: int):
    """Spatial side lengths of the pyramid levels for a square input."""
    if image_size % 32:
        raise IndivisibleInput(f"image size {image_size} is not divisible by 32")
    return [image_size // s for s in (2, 4, 8, 16, 32)]
