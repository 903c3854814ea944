"""Multi-view input generation and inverse feature alignment.

A "view" is a geometric transform of the input image that simulates a
different way of observing the same scene: mirror flips (angle views),
rescaling (distance views), and three-point affine warps (perspective
views). Features extracted from a transformed view are mapped back to the
original view's pixel grid with :func:`align_feature` so that element-wise
fusion across views compares the same spatial locations.

Images are numpy arrays of shape (H, W, C) with values in [0, 1]. Feature
maps are torch tensors of shape (..., C, H, W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import (
    CollinearPoints,
    DegenerateSize,
    DuplicateView,
    InvalidViewConfig,
    NonSquareInput,
)

ORIGINAL = "original"
DIAGONAL_FLIP = "dflip"
VERTICAL_FLIP = "vflip"
CLOSE = "close"
FAR = "far"
PERSPECTIVE = "perspective"

_KINDS = (ORIGINAL, DIAGONAL_FLIP, VERTICAL_FLIP, CLOSE, FAR, PERSPECTIVE)

# Minimum spread between the scale ratios of any two distance views. The
# default close pair (1.5, 2.0) sits exactly on this bound.
MIN_RATIO_INTERVAL = 0.5

# Default mild three-point warp, in coordinates relative to the image size.
_DEFAULT_PERSP_SRC = ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))
_DEFAULT_PERSP_DST = ((0.05, 0.02), (0.98, 0.0), (0.0, 0.97))


def _collinear(pts) -> bool:
    (x0, y0), (x1, y1), (x2, y2) = pts
    return abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)) < 1e-9


@dataclass(frozen=True)
class ViewKind:
    """Tagged description of one view transform.

    ``ratio`` applies to close/far kinds. Perspective points are stored in
    coordinates relative to the image size (so one kind describes the same
    warp at any resolution) and scaled to pixels when applied.
    """

    kind: str
    ratio: float | None = None
    src_pts: tuple = field(default=None)
    dst_pts: tuple = field(default=None)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidViewConfig(f"unknown view kind: {self.kind!r}")
        if self.kind == CLOSE:
            if self.ratio is None or self.ratio <= 1.0:
                raise InvalidViewConfig(f"close ratio must exceed 1.0, got {self.ratio}")
        elif self.kind == FAR:
            if self.ratio is None or not 0.0 < self.ratio < 1.0:
                raise InvalidViewConfig(f"far ratio must lie in (0, 1), got {self.ratio}")
        elif self.kind == PERSPECTIVE:
            src = self.src_pts if self.src_pts is not None else _DEFAULT_PERSP_SRC
            dst = self.dst_pts if self.dst_pts is not None else _DEFAULT_PERSP_DST
            src = tuple(tuple(float(v) for v in p) for p in src)
            dst = tuple(tuple(float(v) for v in p) for p in dst)
            if len(src) != 3 or len(dst) != 3:
                raise InvalidViewConfig("perspective views need three point pairs")
            if _collinear(src) or _collinear(dst):
                raise CollinearPoints("perspective points are collinear")
            object.__setattr__(self, "src_pts", src)
            object.__setattr__(self, "dst_pts", dst)
        elif self.ratio is not None:
            raise InvalidViewConfig(f"{self.kind} takes no ratio")

    # -- constructors ---------------------------------------------------
    @classmethod
    def original(cls) -> "ViewKind":
        return cls(ORIGINAL)

    @classmethod
    def diagonal_flip(cls) -> "ViewKind":
        return cls(DIAGONAL_FLIP)

    @classmethod
    def vertical_flip(cls) -> "ViewKind":
        return cls(VERTICAL_FLIP)

    @classmethod
    def close(cls, ratio: float) -> "ViewKind":
        return cls(CLOSE, ratio=float(ratio))

    @classmethod
    def far(cls, ratio: float) -> "ViewKind":
        return cls(FAR, ratio=float(ratio))

    @classmethod
    def perspective(cls, src_pts=None, dst_pts=None) -> "ViewKind":
        return cls(PERSPECTIVE, src_pts=src_pts, dst_pts=dst_pts)

    @classmethod
    def parse(cls, text: str) -> "ViewKind":
        """Parse a tagged config string such as ``close:1.5`` or ``vflip``."""
        name, _, arg = text.strip().partition(":")
        name = name.lower()
        if name in (ORIGINAL, DIAGONAL_FLIP, VERTICAL_FLIP):
            if arg:
                raise InvalidViewConfig(f"{name} takes no argument: {text!r}")
            return cls(name)
        if name in (CLOSE, FAR):
            try:
                return cls(name, ratio=float(arg))
            except ValueError as exc:
                raise InvalidViewConfig(f"bad ratio in {text!r}") from exc
        if name == PERSPECTIVE:
            if not arg:
                return cls.perspective()
            vals = [float(v) for v in arg.split(",")]
            if len(vals) != 12:
                raise InvalidViewConfig(
                    f"perspective needs 12 comma-separated coords, got {len(vals)}"
                )
            src = tuple((vals[i], vals[i + 1]) for i in range(0, 6, 2))
            dst = tuple((vals[i], vals[i + 1]) for i in range(6, 12, 2))
            return cls.perspective(src, dst)
        raise InvalidViewConfig(f"unknown view kind: {text!r}")

    def tag(self) -> str:
        if self.kind in (CLOSE, FAR):
            return f"{self.kind}:{self.ratio:g}"
        return self.kind

    @property
    def is_distance(self) -> bool:
        return self.kind in (CLOSE, FAR)

    @property
    def is_angle(self) -> bool:
        return self.kind in (DIAGONAL_FLIP, VERTICAL_FLIP, PERSPECTIVE)


def default_views(close_ratios=(1.5, 2.0)) -> list[ViewKind]:
    """Default five-view configuration: original + two flips + two close views."""
    return [
        ViewKind.original(),
        ViewKind.diagonal_flip(),
        ViewKind.vertical_flip(),
        *(ViewKind.close(r) for r in close_ratios),
    ]


def parse_view_list(text: str) -> list[ViewKind]:
    """Parse a comma-separated list of view tags."""
    return [ViewKind.parse(tok) for tok in text.split(",") if tok.strip()]


def validate_view_config(config) -> None:
    seen = set()
    for kind in config:
        if kind in seen:
            raise DuplicateView(f"duplicate view: {kind.tag()}")
        seen.add(kind)
    n_orig = sum(1 for k in config if k.kind == ORIGINAL)
    if n_orig != 1:
        raise InvalidViewConfig(f"config must contain the original view exactly once, found {n_orig}")
    ratios = sorted(k.ratio for k in config if k.is_distance)
    for lo, hi in zip(ratios, ratios[1:]):
        if hi - lo < MIN_RATIO_INTERVAL - 1e-9:
            raise InvalidViewConfig(
                f"distance ratios {lo:g} and {hi:g} are closer than {MIN_RATIO_INTERVAL}"
            )


@dataclass
class ViewSet:
    """One image observed under every configured view."""

    views: dict
    base_size: tuple

    def __iter__(self):
        return iter(self.views.items())

    def __len__(self):
        return len(self.views)


# ---------------------------------------------------------------------------
# image-level operations (numpy, H x W x C)
# ---------------------------------------------------------------------------

def flip_vertical(img: np.ndarray) -> np.ndarray:
    """Mirror the image top-to-bottom: out[y, x] = img[H-1-y, x]."""
    return np.ascontiguousarray(img[::-1])


def flip_diagonal(img: np.ndarray) -> np.ndarray:
    """Reflect a square image across its main diagonal: out[y, x] = img[x, y].

    "Diagonal mirror" is taken to mean the matrix transpose; it is an exact
    involution and admits an exact inverse on feature maps. Requires H == W.
    """
    if img.shape[0] != img.shape[1]:
        raise NonSquareInput(f"diagonal flip needs a square image, got {img.shape[:2]}")
    return np.ascontiguousarray(np.swapaxes(img, 0, 1))


def _to_chw(img: np.ndarray) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))
    return t.permute(2, 0, 1).unsqueeze(0)


def _to_hwc(t: torch.Tensor) -> np.ndarray:
    return t.squeeze(0).permute(1, 2, 0).numpy()


def resize_view(img: np.ndarray, ratio: float) -> np.ndarray:
    """Bilinear rescale by ``ratio``; output is round(ratio*H) x round(ratio*W)."""
    if ratio <= 0:
        raise DegenerateSize(f"ratio must be positive, got {ratio}")
    h, w = img.shape[:2]
    nh, nw = int(round(ratio * h)), int(round(ratio * w))
    if nh < 1 or nw < 1:
        raise DegenerateSize(f"resize of {h}x{w} by {ratio} collapses to {nh}x{nw}")
    if (nh, nw) == (h, w):
        return img.copy()
    out = F.interpolate(_to_chw(img), size=(nh, nw), mode="bilinear", align_corners=False)
    return np.clip(_to_hwc(out), 0.0, 1.0)


def _affine_from_points(src_pts, dst_pts) -> np.ndarray:
    """2x3 matrix A with A @ (sx, sy, 1) = (dx, dy) for the three point pairs."""
    src = np.asarray(src_pts, dtype=np.float64)
    dst = np.asarray(dst_pts, dtype=np.float64)
    if _collinear(src) or _collinear(dst):
        raise CollinearPoints("affine points are collinear")
    m = np.hstack([src, np.ones((3, 1))])
    coef = np.linalg.solve(m, dst)  # (3, 2): columns are (a,b,c) for x and y
    return coef.T


def _invert_affine(a: np.ndarray) -> np.ndarray:
    lin = a[:, :2]
    det = np.linalg.det(lin)
    if abs(det) < 1e-12:
        raise CollinearPoints("affine map is not invertible")
    inv = np.linalg.inv(lin)
    return np.hstack([inv, -inv @ a[:, 2:3]])


def _warp_affine(batch: torch.Tensor, a: np.ndarray, out_hw=None) -> torch.Tensor:
    """Sample ``batch`` (B, C, H, W) under the pixel-space affine map ``a``.

    Output pixel (x, y) takes the bilinear sample at A^-1 (x, y); samples
    outside the frame are zero.
    """
    _, _, h, w = batch.shape
    oh, ow = out_hw if out_hw is not None else (h, w)
    inv = _invert_affine(a)
    dt = batch.dtype
    ys, xs = torch.meshgrid(
        torch.arange(oh, dtype=dt), torch.arange(ow, dtype=dt), indexing="ij"
    )
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    gx = 2.0 * sx / max(w - 1, 1) - 1.0
    gy = 2.0 * sy / max(h - 1, 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1).expand(batch.shape[0], oh, ow, 2)
    return F.grid_sample(batch, grid, mode="bilinear", padding_mode="zeros", align_corners=True)


def perspective_view(img: np.ndarray, src_pts, dst_pts) -> np.ndarray:
    """Warp by the unique affine map sending three source points to three targets.

    Points are (x, y) pixel coordinates. Out-of-frame samples fill with 0.
    """
    a = _affine_from_points(src_pts, dst_pts)
    out = _warp_affine(_to_chw(img), a)
    return np.clip(_to_hwc(out), 0.0, 1.0)


def _scale_points(pts, h: int, w: int):
    return tuple((x * (w - 1), y * (h - 1)) for x, y in pts)


def apply_view(img: np.ndarray, kind: ViewKind) -> np.ndarray:
    """Apply one view transform to an (H, W, C) image."""
    if kind.kind == ORIGINAL:
        return img.copy()
    if kind.kind == VERTICAL_FLIP:
        return flip_vertical(img)
    if kind.kind == DIAGONAL_FLIP:
        return flip_diagonal(img)
    if kind.kind in (CLOSE, FAR):
        return resize_view(img, kind.ratio)
    h, w = img.shape[:2]
    return perspective_view(img, _scale_points(kind.src_pts, h, w), _scale_points(kind.dst_pts, h, w))


def apply_view_batch(batch: torch.Tensor, kind: ViewKind) -> torch.Tensor:
    """Apply one view transform to a (B, C, H, W) tensor batch."""
    if kind.kind == ORIGINAL:
        return batch
    if kind.kind == VERTICAL_FLIP:
        return torch.flip(batch, dims=(-2,))
    if kind.kind == DIAGONAL_FLIP:
        if batch.shape[-1] != batch.shape[-2]:
            raise NonSquareInput(f"diagonal flip needs square inputs, got {tuple(batch.shape[-2:])}")
        return batch.transpose(-2, -1).contiguous()
    h, w = batch.shape[-2:]
    if kind.kind in (CLOSE, FAR):
        nh, nw = int(round(kind.ratio * h)), int(round(kind.ratio * w))
        if nh < 1 or nw < 1:
            raise DegenerateSize(f"resize of {h}x{w} by {kind.ratio} collapses to {nh}x{nw}")
        return F.interpolate(batch, size=(nh, nw), mode="bilinear", align_corners=False)
    a = _affine_from_points(_scale_points(kind.src_pts, h, w), _scale_points(kind.dst_pts, h, w))
    return _warp_affine(batch, a)


def generate_views(img: np.ndarray, config=None) -> ViewSet:
    """Build the full view set of an image under a validated configuration."""
    if config is None:
        config = default_views()
    validate_view_config(config)
    views = {kind: apply_view(img, kind) for kind in config}
    return ViewSet(views=views, base_size=tuple(img.shape[:2]))


# ---------------------------------------------------------------------------
# feature-level alignment (torch, ... x C x H x W)
# ---------------------------------------------------------------------------

def align_feature(feat: torch.Tensor, kind: ViewKind, target_hw=None) -> torch.Tensor:
    """Map a feature tensor from view space back to the original view's grid.

    Flip views invert exactly (flip/transpose again); distance views rescale
    bilinearly to ``target_hw`` (defaults to round(size / ratio)); perspective
    views sample under the inverse point correspondence at the same size.
    """
    squeeze = feat.dim() == 3
    x = feat.unsqueeze(0) if squeeze else feat
    k = kind.kind
    if k == ORIGINAL:
        out = x
    elif k == VERTICAL_FLIP:
        out = torch.flip(x, dims=(-2,))
    elif k == DIAGONAL_FLIP:
        if x.shape[-1] != x.shape[-2]:
            raise NonSquareInput(
                f"diagonal un-flip needs square feature maps, got {tuple(x.shape[-2:])}"
            )
        out = x.transpose(-2, -1)
    elif k in (CLOSE, FAR):
        if target_hw is None:
            target_hw = (
                int(round(x.shape[-2] / kind.ratio)),
                int(round(x.shape[-1] / kind.ratio)),
            )
        out = F.interpolate(x, size=tuple(target_hw), mode="bilinear", align_corners=False)
    else:
        h, w = x.shape[-2:]
        a = _affine_from_points(
            _scale_points(kind.dst_pts, h, w), _scale_points(kind.src_pts, h, w)
        )
        out = _warp_affine(x, a, out_hw=target_hw)
    return out.squeeze(0) if squeeze else out
