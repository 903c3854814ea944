"""Segmentation loss: pixel-wise BCE plus an uncertainty-aware penalty.

The auxiliary term 1 - (2p - 1)^2 is maximal at p = 0.5 and vanishes at
confident predictions, pushing the probability map away from ambiguity. Its
weight follows a cosine schedule over training epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import EpochOutOfRange, NonBinaryGT, ShapeMismatch

EPS = 1e-7

SCHEDULES = ("cosine", "cosine_up", "constant")


@dataclass
class LossConfig:
    lambda_init: float = 1.5
    schedule: str = "cosine"
    total_epochs: int = 50

    def __post_init__(self):
        if self.lambda_init < 0:
            raise ValueError(f"lambda_init must be >= 0, got {self.lambda_init}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.total_epochs < 1:
            raise ValueError(f"total_epochs must be >= 1, got {self.total_epochs}")


def _check_pair(p: torch.Tensor, g: torch.Tensor):
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {tuple(p.shape)} vs ground truth {tuple(g.shape)}")
    if not torch.all((g == 0) | (g == 1)):
        raise NonBinaryGT("ground truth must contain only 0 and 1")


def bce(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Mean binary cross entropy on a probability map, clamped away from log(0)."""
    _check_pair(p, g)
    pc = p.clamp(EPS, 1.0 - EPS)
    return (-g * torch.log(pc) - (1.0 - g) * torch.log(1.0 - pc)).mean()


def bce_logits(logits: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Mean binary cross entropy computed from logits (log-sum-exp stable)."""
    _check_pair(logits, g)
    return F.binary_cross_entropy_with_logits(logits, g)


def ual(p: torch.Tensor) -> torch.Tensor:
    """Mean uncertainty penalty 1 - (2p - 1)^2; 1 at p=0.5, 0 at p in {0, 1}."""
    return (1.0 - (2.0 * p - 1.0) ** 2).mean()


def lambda_at(epoch: int, cfg: LossConfig) -> float:
    """Uncertainty-term weight at ``epoch`` under the configured schedule."""
    if not 0 <= epoch <= cfg.total_epochs:
        raise EpochOutOfRange(f"epoch {epoch} outside [0, {cfg.total_epochs}]")
    if cfg.schedule == "constant":
        return cfg.lambda_init
    phase = (1.0 + math.cos(math.pi * epoch / cfg.total_epochs)) / 2.0
    if cfg.schedule == "cosine_up":
        phase = 1.0 - phase
    return cfg.lambda_init * phase


def total_loss(p: torch.Tensor, g: torch.Tensor, epoch: int, cfg: LossConfig) -> torch.Tensor:
    """bce + lambda(epoch) * ual on a probability map."""
    return bce(p, g) + lambda_at(epoch, cfg) * ual(p)


def total_loss_logits(logits: torch.Tensor, g: torch.Tensor, epoch: int, cfg: LossConfig) -> torch.Tensor:
    """Same composite loss evaluated from logits; used by the training loop."""
    return bce_logits(logits, g) + lambda_at(epoch, cfg) * ual(torch.sigmoid(logits))
