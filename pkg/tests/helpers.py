"""Shared test utilities: synthetic data, random map pairs, gradient checks."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image


def make_synthetic_dataset(root, n=8, size=96, seed=0) -> Path:
    """Write ``n`` ellipse-on-noise images with masks under root/Images, root/GT."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    (root / "Images").mkdir(parents=True, exist_ok=True)
    (root / "GT").mkdir(parents=True, exist_ok=True)
    yy, xx = np.mgrid[0:size, 0:size]
    for k in range(n):
        cy, cx = rng.uniform(0.3, 0.7, 2) * size
        ry, rx = rng.uniform(0.18, 0.32, 2) * size
        ang = rng.uniform(0, np.pi)
        ca, sa = np.cos(ang), np.sin(ang)
        u = (xx - cx) * ca + (yy - cy) * sa
        v = -(xx - cx) * sa + (yy - cy) * ca
        mask = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        bg = rng.uniform(0.1, 0.45, 3)
        fg = rng.uniform(0.55, 0.95, 3)
        img = np.empty((size, size, 3), np.float32)
        for c in range(3):
            img[..., c] = np.where(mask, fg[c], bg[c])
        img = np.clip(img + rng.normal(0, 0.05, (size, size, 3)), 0, 1)
        Image.fromarray((img * 255).astype(np.uint8)).save(root / "Images" / f"img_{k:02d}.png")
        Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(root / "GT" / f"img_{k:02d}.png")
    return root


def random_map_pair(rng, max_side=32, structured=True):
    """A random prediction/mask pair. Structured pairs blur the mask into the
    prediction so the maps correlate like real model output."""
    h = int(rng.integers(8, max_side + 1))
    w = int(rng.integers(8, max_side + 1))
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(0.25, 0.75) * h, rng.uniform(0.25, 0.75) * w
    ry, rx = rng.uniform(0.15, 0.4) * h, rng.uniform(0.15, 0.4) * w
    g = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if not g.any():
        g[h // 2, w // 2] = True
    if structured:
        p = 0.6 * g.astype(np.float64) + 0.4 * rng.random((h, w))
    else:
        p = rng.random((h, w))
    return np.clip(p, 0.0, 1.0), g


def flat_params(tensors):
    return [t for t in tensors if t.requires_grad]


def central_diff(fn, tensor, index, eps=1e-6):
    """Central finite difference of scalar fn at one coordinate of tensor."""
    with torch.no_grad():
        orig = tensor.view(-1)[index].item()
        tensor.view(-1)[index] = orig + eps
        hi = float(fn())
        tensor.view(-1)[index] = orig - eps
        lo = float(fn())
        tensor.view(-1)[index] = orig
    return (hi - lo) / (2 * eps)


def check_gradients(fn, tensors, rng, n_coords=8, eps=1e-6, tol=1e-4):
    """Compare autograd gradients of scalar ``fn()`` against central
    differences at sampled coordinates of every tensor; returns max error.

    Error is relative for large gradients with an absolute floor of ``tol``
    scale: |a - n| / max(1, |a|, |n|).
    """
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    value = fn()
    value.backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "no gradient reached a checked tensor"
        n = t.numel()
        coords = rng.choice(n, size=min(n_coords, n), replace=False)
        for idx in coords:
            analytic = float(t.grad.view(-1)[idx])
            numeric = central_diff(fn, t, int(idx), eps)
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    assert worst < tol, f"gradient mismatch: max error {worst:.3e} >= {tol}"
    return worst
