"""Full network: shared encoder over all views, per-level co-attention
fusion, channel fusion, and the decoding head.

The network is built for a fixed square input size because the co-attention
mode matrices are sized to each pyramid level's resolution. Views are listed
in the model config; at each level the angle-type views (flips, perspective)
and distance-type views (close, far) are aligned to the original view's grid
and routed into the two attention branches, padding with the original view
when a branch has fewer than three inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from . import checkpoints
from .camv import Camv, MvTensor
from .cfu import CfuBlock, Decoder
from .encoder import Encoder, EncoderConfig, level_sizes
from .errors import CheckpointMismatch
from .views import ViewKind, align_feature, apply_view_batch, default_views, validate_view_config

TINY_CLOSE_RATIOS = (4.0 / 3.0, 2.0)  # keep close-view sizes divisible by 32 at 96 px


@dataclass
class ModelConfig:
    depth: object = 50
    image_size: int = 384
    views: list = field(default_factory=default_views)
    channels: int = 64
    fpn_channels: int = 256
    camv_stage2: bool = True
    cfu_enabled: bool = True
    clip_groups: int = 3
    opi_steps: int = 4
    backbone_weights: str | None = None

    def __post_init__(self):
        validate_view_config(self.views)

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        base = dict(
            depth="tiny",
            image_size=96,
            views=default_views(TINY_CLOSE_RATIOS),
            fpn_channels=32,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "image_size": self.image_size,
            "views": [k.tag() for k in self.views],
            "channels": self.channels,
            "fpn_channels": self.fpn_channels,
            "camv_stage2": self.camv_stage2,
            "cfu_enabled": self.cfu_enabled,
            "clip_groups": self.clip_groups,
            "opi_steps": self.opi_steps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["views"] = [ViewKind.parse(tag) for tag in data.get("views", [])]
        data.pop("backbone_weights", None)
        return cls(**data)


PROFILES = {"full": ModelConfig.full, "tiny": ModelConfig.tiny}


class MffnNet(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        self.encoder = Encoder(
            EncoderConfig(
                depth=cfg.depth,
                fpn_channels=cfg.fpn_channels,
                out_channels=cfg.channels,
                weights=cfg.backbone_weights,
            )
        )
        sizes = level_sizes(cfg.image_size)
        self.camv = nn.ModuleList(
            Camv(cfg.channels, s, s, stage2=cfg.camv_stage2) for s in sizes
        )
        if cfg.cfu_enabled:
            self.cfu = nn.ModuleList(
                CfuBlock(cfg.channels, cfg.clip_groups, cfg.opi_steps) for _ in sizes
            )
            decoder_in = self.cfu[0].padded_channels
        else:
            self.cfu = None
            decoder_in = cfg.channels
        self.decoder = Decoder(decoder_in, cfg.channels)
        self._original = next(k for k in cfg.views if k.kind == "original")

    # -- view plumbing ----------------------------------------------------
    def make_view_batches(self, imgs: torch.Tensor) -> dict:
        """Expand an image batch (B, 3, S, S) into one batch per view."""
        return {kind: apply_view_batch(imgs, kind) for kind in self.config.views}

    def _route(self, aligned: dict) -> MvTensor:
        origin = aligned[self._original]
        angle = [aligned[k] for k in self.config.views if k.is_angle]
        dist = [aligned[k] for k in self.config.views if k.is_distance]
        fill = lambda feats: tuple((feats + [origin] * 3)[:3])
        return MvTensor(angle=fill(angle), dist=fill(dist))

    def fuse_levels(self, view_batches: dict) -> list:
        """Encode every view, align per level, and fuse into enhanced maps."""
        pyramids = {k: self.encoder(t) for k, t in view_batches.items()}
        targets = [lv.shape[-2:] for lv in pyramids[self._original]]
        fused = []
        for i, camv in enumerate(self.camv):
            aligned = {
                k: align_feature(pyr[i], k, target_hw=targets[i])
                for k, pyr in pyramids.items()
            }
            fused.append(camv(self._route(aligned)))
        return fused

    def forward(self, imgs: torch.Tensor) -> torch.Tensor:
        """Image batch (B, 3, S, S) to logits (B, 1, S, S)."""
        fused = self.fuse_levels(self.make_view_batches(imgs))
        if self.cfu is not None:
            fused = [block(f) for block, f in zip(self.cfu, fused)]
        return self.decoder(fused, out_hw=imgs.shape[-2:])

    def predict_probs(self, imgs: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward(imgs))

    def freeze_backbone(self):
        for p in self.encoder.backbone.parameters():
            p.requires_grad = False


def build_model(profile="full", **overrides) -> MffnNet:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return MffnNet(PROFILES[profile](**overrides))


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parameter_breakdown(model: MffnNet) -> dict:
    parts = {
        "encoder.backbone": model.encoder.backbone,
        "encoder.neck": model.encoder.neck,
        "camv": model.camv,
        "cfu": model.cfu,
        "decoder": model.decoder,
    }
    out = {}
    for name, module in parts.items():
        out[name] = 0 if module is None else count_parameters(module)
    out["total"] = count_parameters(model)
    return out


# -- checkpoint round trip ---------------------------------------------------

def save_model(path, model: MffnNet, meta: dict | None = None):
    meta = dict(meta or {})
    meta["model_config"] = model.config.to_dict()
    return checkpoints.save_state(path, model.state_dict(), meta)


def load_model(path):
    """Rebuild a model from a checkpoint; returns (model, manifest meta)."""
    manifest = checkpoints.load_manifest(path)
    meta = manifest.get("meta", {})
    if "model_config" not in meta:
        raise CheckpointMismatch(f"{path}: manifest lacks a model config")
    model = MffnNet(ModelConfig.from_dict(meta["model_config"]))
    state = checkpoints.load_state(path)
    own = model.state_dict()
    if set(state) != set(own):
        missing = sorted(set(own) ^ set(state))
        raise CheckpointMismatch(f"{path}: state entries disagree ({missing[:4]} ...)")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(own[name].shape):
            raise CheckpointMismatch(
                f"{path}: {name} shape {tuple(tensor.shape)} != {tuple(own[name].shape)}"
            )
    model.load_state_dict(state)
    return model, meta
