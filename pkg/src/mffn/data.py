"""Dataset ingestion: paired images and binary masks from disk.

A dataset root holds ``Images/`` (jpg or png) and ``GT/`` (png masks) with
matching file stems. Images are bilinearly resized to the working square
size and scaled to [0, 1]; masks are nearest-neighbor resized and binarized
at the half-intensity threshold (values >= 128 become foreground).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import EmptyDataset, MissingMask, UnreadableImage

IMAGES_DIR = "Images"
GT_DIR = "GT"
IMAGE_EXTS = (".jpg", ".jpeg", ".png")


@dataclass
class DatasetSpec:
    root: Path
    split: str = "train"

    def __post_init__(self):
        self.root = Path(self.root)
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"split must be train/val/test, got {self.split!r}")


def _read_rgb(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def _read_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float32)
    except (OSError, SyntaxError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def list_pairs(spec: DatasetSpec) -> list:
    """Sorted (image_path, mask_path) pairs; every image must have a mask."""
    img_dir = spec.root / IMAGES_DIR
    gt_dir = spec.root / GT_DIR
    if not img_dir.is_dir():
        raise EmptyDataset(f"{img_dir} does not exist")
    pairs = []
    for img_path in sorted(img_dir.iterdir()):
        if img_path.suffix.lower() not in IMAGE_EXTS:
            continue
        mask_path = gt_dir / (img_path.stem + ".png")
        if not mask_path.is_file():
            raise MissingMask(f"no mask for {img_path.name} under {gt_dir}")
        pairs.append((img_path, mask_path))
    if not pairs:
        raise EmptyDataset(f"no images under {img_dir}")
    return pairs


class CodDataset:
    """Lazy-loading list of (image, mask) tensors at a fixed square size."""

    def __init__(self, pairs, image_size: int):
        self.pairs = list(pairs)
        self.image_size = image_size

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, idx):
        img_path, mask_path = self.pairs[idx]
        img = torch.from_numpy(_read_rgb(img_path)).permute(2, 0, 1).unsqueeze(0)
        img = F.interpolate(img, size=(self.image_size,) * 2, mode="bilinear", align_corners=False)
        mask = torch.from_numpy(_read_mask(mask_path))[None, None]
        mask = F.interpolate(mask, size=(self.image_size,) * 2, mode="nearest")
        mask = (mask >= 128.0).float()
        return img.squeeze(0), mask.squeeze(0)

    def subset(self, indices) -> "CodDataset":
        return CodDataset([self.pairs[i] for i in indices], self.image_size)


def load_dataset(spec: DatasetSpec, image_size: int) -> CodDataset:
    return CodDataset(list_pairs(spec), image_size)


def split_train_val(dataset: CodDataset, fraction=0.1, seed=0):
    """Deterministically hold out a validation share of the training pool."""
    n = len(dataset)
    n_val = max(1, int(round(fraction * n))) if n > 1 else 0
    order = np.random.default_rng(seed).permutation(n)
    val_idx = sorted(order[:n_val].tolist())
    train_idx = sorted(order[n_val:].tolist())
    if not train_idx:
        train_idx, val_idx = val_idx, []
    return dataset.subset(train_idx), dataset.subset(val_idx)


def iter_batches(dataset: CodDataset, batch_size: int, shuffle=False, seed=0):
    """Yield (images, masks) tensor batches in a deterministic order."""
    order = np.arange(len(dataset))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        items = [dataset[i] for i in chunk]
        yield torch.stack([im for im, _ in items]), torch.stack([mk for _, mk in items])
