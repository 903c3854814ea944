"""Checkpoint storage: a flat name->tensor ``.npz`` archive plus a JSON manifest.

A checkpoint with base path ``ckpt`` consists of ``ckpt.npz`` (one array per
parameter/buffer, keyed by its state-dict name) and ``ckpt.manifest.json``
listing every entry's name, shape and dtype together with free-form metadata
(model config, epoch, validation scores). The format is backend-neutral: any
reader that understands npz and JSON can reconstruct the tensors.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import WeightFileUnreadable

ARCHIVE_SUFFIX = ".npz"
MANIFEST_SUFFIX = ".manifest.json"


def _base(path) -> Path:
    p = Path(path)
    name = p.name
    for suffix in (ARCHIVE_SUFFIX, MANIFEST_SUFFIX):
        if name.endswith(suffix):
            return p.with_name(name[: -len(suffix)])
    return p


def archive_path(path) -> Path:
    return _base(path).with_name(_base(path).name + ARCHIVE_SUFFIX)


def manifest_path(path) -> Path:
    return _base(path).with_name(_base(path).name + MANIFEST_SUFFIX)


def save_state(path, state: dict, meta: dict | None = None) -> Path:
    """Write a state dict (name -> tensor) and its manifest; returns the base path."""
    base = _base(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: t.detach().cpu().numpy() for name, t in state.items()}
    np.savez(archive_path(base), **arrays)
    manifest = {
        "entries": [
            {"name": n, "shape": list(a.shape), "dtype": str(a.dtype)}
            for n, a in arrays.items()
        ],
        "meta": meta or {},
    }
    manifest_path(base).write_text(json.dumps(manifest, indent=1))
    return base


def load_state(path) -> dict:
    """Read a name -> tensor dict from an archive; raises WeightFileUnreadable."""
    apath = archive_path(path)
    try:
        with np.load(apath) as data:
            return {name: torch.from_numpy(np.array(data[name])) for name in data.files}
    except FileNotFoundError as exc:
        raise WeightFileUnreadable(f"{apath}: not found") from exc
    except (OSError, ValueError) as exc:
        raise WeightFileUnreadable(f"{apath}: {exc}") from exc


def load_manifest(path) -> dict:
    mpath = manifest_path(path)
    try:
        return json.loads(mpath.read_text())
    except FileNotFoundError as exc:
        raise WeightFileUnreadable(f"{mpath}: not found") from exc
    except json.JSONDecodeError as exc:
        raise WeightFileUnreadable(f"{mpath}: bad manifest ({exc})") from exc
