"""Training loop, learning-rate schedule, early stopping, and prediction.

Optimization follows the reference recipe: SGD with momentum 0.9 and weight
decay 5e-4, learning rate 0.01 under a linear warmup followed by cosine
decay, batch size 8 at 384 px (tiny profile: batch 2 at 96 px). The model is
validated every ``eval_every`` epochs; training stops once at least three of
the five validation measures fail to improve on the previous evaluation, and
the checkpoint with the best structure measure is kept.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import metrics as metrics_mod
from .data import CodDataset, DatasetSpec, iter_batches, load_dataset, split_train_val
from .errors import DivergedLoss, InsufficientHistory, UnreadableImage
from .losses import LossConfig, total_loss_logits
from .model import MffnNet, ModelConfig, load_model, save_model

METRIC_HIGHER_IS_BETTER = {
    "s_measure": True,
    "f_beta_weighted": True,
    "mae": False,
    "f_beta": True,
    "e_measure": True,
}


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 60
    batch_size: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup_epochs: int = 3
    eval_every: int = 3
    seed: int = 0
    lambda_init: float = 1.5
    lambda_schedule: str = "cosine"
    stop_compare: str = "previous"  # or "best": compare against the best so far
    val_fraction: float = 0.1
    max_steps: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.stop_compare not in ("previous", "best"):
            raise ValueError(f"stop_compare must be previous/best, got {self.stop_compare}")

    def loss_config(self) -> LossConfig:
        return LossConfig(self.lambda_init, self.lambda_schedule, self.epochs)


def tiny_train_config(**overrides) -> TrainConfig:
    model_fields = {f.name for f in fields(ModelConfig)}
    model_overrides = {k: overrides.pop(k) for k in list(overrides) if k in model_fields}
    base = dict(model=ModelConfig.tiny(**model_overrides), batch_size=2, epochs=50)
    base.update(overrides)
    return TrainConfig(**base)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to the base rate, then cosine decay towards zero."""
    warmup = min(cfg.warmup_epochs, cfg.epochs - 1)
    if warmup > 0 and epoch < warmup:
        return cfg.lr * (epoch + 1) / warmup
    span = max(cfg.epochs - 1 - warmup, 1)
    phase = min(max(epoch - warmup, 0), span)
    return cfg.lr * (1.0 + math.cos(math.pi * phase / span)) / 2.0


class EvalHistory:
    """Validation reports indexed by strictly increasing epoch numbers."""

    def __init__(self, entries=None):
        self.entries = []
        for epoch, report in entries or []:
            self.append(epoch, report)

    def append(self, epoch: int, report):
        if self.entries and epoch <= self.entries[-1][0]:
            raise ValueError(f"epoch {epoch} not after {self.entries[-1][0]}")
        self.entries.append((epoch, report))

    def __len__(self):
        return len(self.entries)

    def best_epoch(self) -> int:
        """Epoch of the highest structure measure."""
        if not self.entries:
            raise InsufficientHistory("no evaluations recorded")
        return max(self.entries, key=lambda e: e[1].s_measure)[0]


def _improved(latest: dict, reference: dict) -> int:
    count = 0
    for name, higher in METRIC_HIGHER_IS_BETTER.items():
        a, b = latest[name], reference[name]
        count += (a > b) if higher else (a < b)
    return count


def should_stop(history: EvalHistory, compare="previous") -> bool:
    """Stop when >= 3 of the 5 measures fail to improve on the reference
    evaluation (the immediately preceding one, or the best so far)."""
    if len(history) < 2:
        raise InsufficientHistory(f"need >= 2 evaluations, have {len(history)}")
    latest = history.entries[-1][1].scalars()
    if compare == "previous":
        reference = history.entries[-2][1].scalars()
    else:
        previous = [r.scalars() for _, r in history.entries[:-1]]
        reference = {
            name: (max if higher else min)(s[name] for s in previous)
            for name, higher in METRIC_HIGHER_IS_BETTER.items()
        }
    return 5 - _improved(latest, reference) >= 3


@dataclass
class TrainResult:
    best_checkpoint: Path
    best_epoch: int
    stopped_early: bool
    steps: int
    losses: list
    history: EvalHistory


def evaluate_model(model: MffnNet, dataset: CodDataset, batch_size=4) -> metrics_mod.MetricReport:
    """Validation metrics of sigmoid predictions against the resized masks."""
    model.eval()
    pairs = []
    with torch.no_grad():
        for imgs, masks in iter_batches(dataset, batch_size):
            probs = model.predict_probs(imgs)
            for p, g in zip(probs, masks):
                pairs.append((p[0].numpy().astype(np.float64), g[0].numpy() > 0.5))
    return metrics_mod.evaluate_pairs(pairs)


def train(cfg: TrainConfig, train_spec, val_spec=None, out_dir="runs") -> TrainResult:
    """Full training run; returns the best checkpoint by structure measure.

    ``train_spec``/``val_spec`` may be DatasetSpec instances or prepared
    CodDataset objects. Without a validation source, a deterministic
    ``val_fraction`` share of the training pool is held out.
    """
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    size = cfg.model.image_size
    train_set = train_spec if isinstance(train_spec, CodDataset) else load_dataset(train_spec, size)
    if val_spec is None:
        train_set, val_set = split_train_val(train_set, cfg.val_fraction, cfg.seed)
    else:
        val_set = val_spec if isinstance(val_spec, CodDataset) else load_dataset(val_spec, size)
    if len(val_set) == 0:
        val_set = train_set

    model = MffnNet(cfg.model)
    opt = torch.optim.SGD(
        (p for p in model.parameters() if p.requires_grad),
        lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
    )
    loss_cfg = cfg.loss_config()
    history = EvalHistory()
    losses = []
    best = {"epoch": 0, "s_measure": -1.0, "path": None}
    step = 0
    stopped = False

    def budget_left():
        return cfg.max_steps is None or step < cfg.max_steps

    for epoch in range(cfg.epochs):
        for group in opt.param_groups:
            group["lr"] = lr_at(epoch, cfg)
        model.train()
        for imgs, masks in iter_batches(
            train_set, cfg.batch_size, shuffle=True, seed=cfg.seed * 100003 + epoch
        ):
            if not budget_left():
                break
            opt.zero_grad()
            loss = total_loss_logits(model(imgs), masks, epoch, loss_cfg)
            if not torch.isfinite(loss):
                raise DivergedLoss(f"loss became {float(loss)} at step {step}")
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            step += 1

        epoch_num = epoch + 1
        if epoch % cfg.eval_every == 0 or not budget_left() or epoch == cfg.epochs - 1:
            report = evaluate_model(model, val_set, batch_size=cfg.batch_size)
            history.append(epoch_num, report)
            path = save_model(
                out_dir / f"ckpt_epoch{epoch_num:03d}", model,
                {"epoch": epoch_num, "val": report.scalars()},
            )
            if report.s_measure > best["s_measure"]:
                best.update(epoch=epoch_num, s_measure=report.s_measure, path=path)
            if len(history) >= 2 and should_stop(history, cfg.stop_compare):
                stopped = True
        if stopped or not budget_left():
            break

    if best["path"] is None:
        best["path"] = save_model(out_dir / "ckpt_final", model, {"epoch": cfg.epochs})
    best_model, _ = load_model(best["path"])
    best_path = save_model(out_dir / "ckpt_best", best_model,
                           {"epoch": best["epoch"], "s_measure": best["s_measure"]})
    (out_dir / "history.json").write_text(json.dumps(
        [{"epoch": e, **r.scalars()} for e, r in history.entries], indent=1))
    return TrainResult(
        best_checkpoint=best_path,
        best_epoch=best["epoch"],
        stopped_early=stopped,
        steps=step,
        losses=losses,
        history=history,
    )


def predict_array(model: MffnNet, img: np.ndarray) -> np.ndarray:
    """Probability map for one (H, W, 3) image in [0, 1], at native resolution."""
    model.eval()
    size = model.config.image_size
    x = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1)[None]
    x_in = torch.nn.functional.interpolate(
        x, size=(size, size), mode="bilinear", align_corners=False
    )
    with torch.no_grad():
        probs = model.predict_probs(x_in)
        probs = torch.nn.functional.interpolate(
            probs, size=img.shape[:2], mode="bilinear", align_corners=False
        )
    return probs[0, 0].numpy().astype(np.float64)


def predict(checkpoint, image_path, out_path) -> np.ndarray:
    """Run a checkpoint on an image file and write the 8-bit grayscale map."""
    model, _ = load_model(checkpoint)
    try:
        with Image.open(image_path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as exc:
        raise UnreadableImage(f"{image_path}: {exc}") from exc
    probs = predict_array(model, rgb)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(probs * 255.0).astype(np.uint8), mode="L").save(out_path)
    return probs
