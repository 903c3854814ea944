"""Evaluation measures for binary segmentation maps.

Implements the five standard camouflage-detection measures — structure
measure, weighted F-measure, mean absolute error, F-measure and
enhanced-alignment measure — plus per-threshold precision/recall and
F-measure curves. Predictions are float maps in [0, 1]; ground truths are
binary. Thresholded measures sweep t = k/255 for k = 0..255 on per-image
min-max normalized predictions, matching common evaluation-toolbox practice.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import MissingPair, ShapeMismatch, UnreadableImage

THRESHOLDS = np.arange(256) / 255.0
_EPS = np.finfo(np.float64).eps


def _as_maps(p, g):
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    return p, g.astype(bool)


def _minmax(p: np.ndarray) -> np.ndarray:
    lo, hi = p.min(), p.max()
    if hi == lo:
        return p.copy()
    return (p - lo) / (hi - lo)


def mae(p, g) -> float:
    """Mean absolute error between a probability map and a binary mask."""
    p, gb = _as_maps(p, g)
    return float(np.abs(p - gb.astype(np.float64)).mean())


# ---------------------------------------------------------------------------
# F-measure
# ---------------------------------------------------------------------------

def _confusion_curves(p_norm: np.ndarray, g: np.ndarray):
    """TP/FP counts of (p >= t) for every t in THRESHOLDS, via histograms."""
    idx_fg = np.searchsorted(THRESHOLDS, p_norm[g], side="right")
    idx_bg = np.searchsorted(THRESHOLDS, p_norm[~g], side="right")
    hist_fg = np.bincount(idx_fg, minlength=257)
    hist_bg = np.bincount(idx_bg, minlength=257)
    tp = int(g.sum()) - np.cumsum(hist_fg)[:256]
    fp = int((~g).sum()) - np.cumsum(hist_bg)[:256]
    return tp.astype(np.float64), fp.astype(np.float64)


def _fbeta_from_counts(tp, fp, n_fg, beta2):
    precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
    recall = tp / n_fg if n_fg > 0 else np.zeros_like(tp)
    denom = beta2 * precision + recall
    f = np.where(denom > 0, (1 + beta2) * precision * recall / np.maximum(denom, _EPS), 0.0)
    return precision, recall, f


def f_beta_curves(p, g, beta2=0.3):
    """(precision, recall, f) arrays over the 256-threshold sweep."""
    p, gb = _as_maps(p, g)
    n_fg = int(gb.sum())
    if n_fg == 0:
        z = np.zeros(256)
        return z, z.copy(), z.copy()
    tp, fp = _confusion_curves(_minmax(p), gb)
    return _fbeta_from_counts(tp, fp, n_fg, beta2)


def adaptive_threshold(p_norm: np.ndarray) -> float:
    return min(2.0 * float(p_norm.mean()), 1.0)


def f_beta(p, g, beta2=0.3, mode="adaptive"):
    """F-measure with beta^2 = 0.3; undefined 0/0 cases evaluate to 0.

    ``mode``: "adaptive" binarizes at min(1, 2*mean); "max" takes the curve
    maximum; "curve" returns all 256 values.
    """
    p, gb = _as_maps(p, g)
    n_fg = int(gb.sum())
    if mode == "curve":
        return f_beta_curves(p, gb, beta2)[2]
    if n_fg == 0:
        return 0.0
    p_norm = _minmax(p)
    if mode == "max":
        tp, fp = _confusion_curves(p_norm, gb)
        return float(_fbeta_from_counts(tp, fp, n_fg, beta2)[2].max())
    if mode == "mean":
        tp, fp = _confusion_curves(p_norm, gb)
        return float(_fbeta_from_counts(tp, fp, n_fg, beta2)[2].mean())
    if mode != "adaptive":
        raise ValueError(f"unknown mode {mode!r}")
    binary = p_norm >= adaptive_threshold(p_norm)
    tp = float(np.logical_and(binary, gb).sum())
    fp = float(np.logical_and(binary, ~gb).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / n_fg
    denom = beta2 * precision + recall
    return float((1 + beta2) * precision * recall / denom) if denom > 0 else 0.0


# ---------------------------------------------------------------------------
# weighted F-measure
# ---------------------------------------------------------------------------

def _gaussian_kernel(size=7, sigma=5.0) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    return k / k.sum()


def f_beta_weighted(p, g) -> float:
    """Weighted F-measure: errors are spread by a 7x7 (sigma 5) Gaussian
    inside the object and distance-weighted outside it, then combined into
    weighted precision/recall with beta^2 = 1."""
    p, gb = _as_maps(p, g)
    if not gb.any():
        return 0.0
    gf = gb.astype(np.float64)
    err = np.abs(p - gf)
    dist, (iy, ix) = ndimage.distance_transform_edt(~gb, return_indices=True)
    err_t = err.copy()
    err_t[~gb] = err[iy[~gb], ix[~gb]]
    err_spread = ndimage.convolve(err_t, _gaussian_kernel(), mode="constant", cval=0.0)
    min_err = np.where(gb & (err_spread < err), err_spread, err)
    weight = np.where(gb, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    err_w = min_err * weight
    n_fg = gf.sum()
    tp_w = n_fg - err_w[gb].sum()
    fp_w = err_w[~gb].sum()
    recall = 1.0 - err_w[gb].mean()
    precision = tp_w / (_EPS + tp_w + fp_w)
    return float(2.0 * precision * recall / (_EPS + precision + recall))


# ---------------------------------------------------------------------------
# structure measure
# ---------------------------------------------------------------------------

def _object_similarity(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _s_object(p, g) -> float:
    mu = float(g.mean())
    o_fg = _object_similarity(p[g])
    o_bg = _object_similarity((1.0 - p)[~g])
    return mu * o_fg + (1.0 - mu) * o_bg


def _ssim_block(p, g) -> float:
    n = p.size
    if n == 0:
        return 1.0
    x, y = float(p.mean()), float(g.mean())
    if n > 1:
        sig_x = float(((p - x) ** 2).sum() / (n - 1))
        sig_y = float(((g - y) ** 2).sum() / (n - 1))
        sig_xy = float(((p - x) * (g - y)).sum() / (n - 1))
    else:
        sig_x = sig_y = sig_xy = 0.0
    alpha = 4.0 * x * y * sig_xy
    beta = (x * x + y * y) * (sig_x + sig_y)
    if alpha != 0.0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0.0 else 0.0


def _s_region(p, g) -> float:
    rows, cols = np.where(g)
    cy = int(round(rows.mean()))
    cx = int(round(cols.mean()))
    h, w = g.shape
    total = float(h * w)
    score = 0.0
    for rs, cs in ((slice(None, cy), slice(None, cx)), (slice(None, cy), slice(cx, None)),
                   (slice(cy, None), slice(None, cx)), (slice(cy, None), slice(cx, None))):
        gb = g[rs, cs]
        weight = gb.size / total
        if gb.size:
            score += weight * _ssim_block(p[rs, cs], gb.astype(np.float64))
    return score


def s_measure(p, g, alpha=0.5) -> float:
    """Structure measure: alpha-blend of object-level and region-level
    similarity. Degenerate masks fall back to 1 - mean(p) (empty mask) or
    mean(p) (full mask)."""
    p, gb = _as_maps(p, g)
    mu = float(gb.mean())
    if mu == 0.0:
        return 1.0 - float(p.mean())
    if mu == 1.0:
        return float(p.mean())
    s = alpha * _s_object(p, gb) + (1.0 - alpha) * _s_region(p, gb)
    return float(min(1.0, max(0.0, s)))


# ---------------------------------------------------------------------------
# enhanced-alignment measure
# ---------------------------------------------------------------------------

def _alignment_for_counts(tp, fp, n_fg, n_px) -> np.ndarray:
    """Mean enhanced alignment of binarized maps against the mask, from counts.

    With binary inputs the per-pixel alignment takes one value per confusion
    cell, so the mean follows from TP/FP/FN/TN counts alone. ``tp``/``fp``
    may be arrays (one entry per threshold); returns an array of means.
    """
    tp = np.atleast_1d(np.asarray(tp, dtype=np.float64))
    fp = np.atleast_1d(np.asarray(fp, dtype=np.float64))
    fn = n_fg - tp
    tn = (n_px - n_fg) - fp
    mu_g = n_fg / n_px
    mu_f = (tp + fp) / n_px
    dg = np.array([[1.0 - mu_g], [1.0 - mu_g], [-mu_g], [-mu_g]])  # cells: TP, FN, FP, TN
    df = np.stack([1.0 - mu_f, -mu_f, 1.0 - mu_f, -mu_f])
    den = dg**2 + df**2
    phi = np.where(den > 0, 2.0 * dg * df / np.where(den > 0, den, 1.0), 0.0)
    enhanced = (phi + 1.0) ** 2 / 4.0
    counts = np.stack([tp, fn, fp, tn])
    return (enhanced * counts).sum(axis=0) / n_px


def e_measure(p, g, mode="adaptive"):
    """Enhanced-alignment measure of the binarized prediction.

    Degenerate masks follow the reference convention: all-background gives
    1 - mean(binary p), all-foreground gives mean(binary p).
    """
    p, gb = _as_maps(p, g)
    n_px = gb.size
    n_fg = int(gb.sum())
    p_norm = _minmax(p)

    def score_at(thr):
        binary = p_norm >= thr
        if n_fg == 0:
            return float(1.0 - binary.mean())
        if n_fg == n_px:
            return float(binary.mean())
        tp = float(np.logical_and(binary, gb).sum())
        fp = float(np.logical_and(binary, ~gb).sum())
        return float(_alignment_for_counts(tp, fp, n_fg, n_px)[0])

    if mode == "adaptive":
        return score_at(adaptive_threshold(p_norm))
    if mode in ("mean", "max", "curve"):
        if n_fg in (0, n_px):
            curve = np.array([score_at(t) for t in THRESHOLDS])
        else:
            tp, fp = _confusion_curves(p_norm, gb)
            curve = _alignment_for_counts(tp, fp, float(n_fg), float(n_px))
        if mode == "curve":
            return curve
        return float(curve.max() if mode == "max" else curve.mean())
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Scalar measures (adaptive-threshold F/E variants are the canonical
    ones) plus averaged precision/recall and F curves over the sweep."""

    s_measure: float
    f_beta_weighted: float
    mae: float
    f_beta: float
    e_measure: float
    f_beta_mean: float = 0.0
    f_beta_max: float = 0.0
    e_measure_mean: float = 0.0
    e_measure_max: float = 0.0
    count: int = 0
    pr_curve: np.ndarray = field(default_factory=lambda: np.zeros((256, 2)), repr=False)
    f_curve: np.ndarray = field(default_factory=lambda: np.zeros(256), repr=False)

    def scalars(self) -> dict:
        """The five canonical measures used for model selection."""
        return {
            "s_measure": self.s_measure,
            "f_beta_weighted": self.f_beta_weighted,
            "mae": self.mae,
            "f_beta": self.f_beta,
            "e_measure": self.e_measure,
        }

    def to_dict(self) -> dict:
        out = self.scalars()
        out.update(
            f_beta_mean=self.f_beta_mean,
            f_beta_max=self.f_beta_max,
            e_measure_mean=self.e_measure_mean,
            e_measure_max=self.e_measure_max,
            count=self.count,
        )
        return out


def evaluate_pair(p, g) -> MetricReport:
    """All measures for one prediction/mask pair."""
    p, gb = _as_maps(p, g)
    precision, recall, f_curve = f_beta_curves(p, gb)
    e_curve = e_measure(p, gb, mode="curve")
    return MetricReport(
        s_measure=s_measure(p, gb),
        f_beta_weighted=f_beta_weighted(p, gb),
        mae=mae(p, gb),
        f_beta=f_beta(p, gb, mode="adaptive"),
        e_measure=e_measure(p, gb, mode="adaptive"),
        f_beta_mean=float(f_curve.mean()),
        f_beta_max=float(f_curve.max()),
        e_measure_mean=float(e_curve.mean()),
        e_measure_max=float(e_curve.max()),
        count=1,
        pr_curve=np.stack([precision, recall], axis=1),
        f_curve=f_curve,
    )


def evaluate_pairs(pairs) -> MetricReport:
    """Average per-image measures over (prediction, mask) pairs; curves are
    averaged pointwise."""
    reports = [evaluate_pair(p, g) for p, g in pairs]
    if not reports:
        raise MissingPair("no prediction/ground-truth pairs to evaluate")
    n = len(reports)
    mean = lambda attr: float(sum(getattr(r, attr) for r in reports)) / n
    return MetricReport(
        s_measure=mean("s_measure"),
        f_beta_weighted=mean("f_beta_weighted"),
        mae=mean("mae"),
        f_beta=mean("f_beta"),
        e_measure=mean("e_measure"),
        f_beta_mean=mean("f_beta_mean"),
        f_beta_max=mean("f_beta_max"),
        e_measure_mean=mean("e_measure_mean"),
        e_measure_max=mean("e_measure_max"),
        count=n,
        pr_curve=np.mean([r.pr_curve for r in reports], axis=0),
        f_curve=np.mean([r.f_curve for r in reports], axis=0),
    )


def read_gray(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def evaluate_dir(pred_dir, gt_dir, out_dir=None) -> MetricReport:
    """Evaluate matching-stem prediction/mask PNGs; optionally write
    ``report.json`` and ``curves.csv`` into ``out_dir``."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = {f.stem: f for f in sorted(pred_dir.iterdir()) if f.is_file()}
    gts = {f.stem: f for f in sorted(gt_dir.iterdir()) if f.is_file()}
    common = sorted(set(preds) & set(gts))
    if not common:
        raise MissingPair(f"no matching stems between {pred_dir} and {gt_dir}")
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise MissingPair(f"unpaired files: {', '.join(missing[:5])}")

    def load(stem):
        p = read_gray(preds[stem]) / 255.0
        g = read_gray(gts[stem]) >= 128
        if p.shape != g.shape:
            raise ShapeMismatch(f"{stem}: prediction {p.shape} vs mask {g.shape}")
        return p, g

    report = evaluate_pairs(load(stem) for stem in common)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def write_report(report: MetricReport, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    with open(out_dir / "curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "f_beta"])
        for k in range(256):
            writer.writerow(
                [f"{THRESHOLDS[k]:.6f}", f"{report.pr_curve[k, 0]:.6f}",
                 f"{report.pr_curve[k, 1]:.6f}", f"{report.f_curve[k]:.6f}"]
            )
