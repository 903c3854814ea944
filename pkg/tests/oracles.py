"""Brute-force reference implementations used to validate the package.

Everything here recomputes results from first principles (explicit fiber
loops, per-threshold confusion counts, dense per-pixel formulas) and shares
no code with the package implementations. The weighted F-measure oracle
reuses the distance-transform library only to resolve which of several
equidistant nearest foreground pixels is chosen (a free choice in the
measure's definition); the distances themselves are recomputed and checked
by brute force.
"""

import math

import numpy as np
from scipy import ndimage

THRESHOLDS = [k / 255.0 for k in range(256)]
EPS = np.finfo(np.float64).eps


def minmax(p):
    lo, hi = p.min(), p.max()
    if hi == lo:
        return p.copy()
    return (p - lo) / (hi - lo)


# -- tensor algebra ----------------------------------------------------------

def mode_product_fibers(t, u, mode):
    """Mode-n product computed fiber by fiber."""
    t = np.asarray(t, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    c, h, w = t.shape
    if mode == 1:
        out = np.zeros((u.shape[0], h, w))
        for y in range(h):
            for x in range(w):
                out[:, y, x] = u @ t[:, y, x]
    elif mode == 2:
        out = np.zeros((c, u.shape[0], w))
        for ci in range(c):
            for x in range(w):
                out[ci, :, x] = u @ t[ci, :, x]
    else:
        out = np.zeros((c, h, u.shape[0]))
        for ci in range(c):
            for y in range(h):
                out[ci, y, :] = u @ t[ci, y, :]
    return out


# -- losses ------------------------------------------------------------------

def bce_scalar(p, g, eps=1e-7):
    total = 0.0
    for pi, gi in zip(np.ravel(p), np.ravel(g)):
        pc = min(max(float(pi), eps), 1.0 - eps)
        total += -float(gi) * math.log(pc) - (1.0 - float(gi)) * math.log(1.0 - pc)
    return total / np.size(p)


def ual_scalar(p):
    total = 0.0
    for pi in np.ravel(p):
        total += 1.0 - (2.0 * float(pi) - 1.0) ** 2
    return total / np.size(p)


# -- F-measure ---------------------------------------------------------------

def fbeta_curve_confusion(p, g, beta2=0.3):
    """Per-threshold F from explicit confusion counts on the normalized map."""
    g = g.astype(bool)
    if not g.any():
        return np.zeros(256)
    pn = minmax(np.asarray(p, dtype=np.float64))
    out = []
    for t in THRESHOLDS:
        b = pn >= t
        tp = int(np.sum(b & g))
        fp = int(np.sum(b & ~g))
        fn = int(np.sum(~b & g))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        denom = beta2 * prec + rec
        out.append((1 + beta2) * prec * rec / denom if denom > 0 else 0.0)
    return np.array(out)


def fbeta_adaptive_confusion(p, g, beta2=0.3):
    g = g.astype(bool)
    if not g.any():
        return 0.0
    pn = minmax(np.asarray(p, dtype=np.float64))
    thr = min(2.0 * pn.mean(), 1.0)
    b = pn >= thr
    tp = int(np.sum(b & g))
    fp = int(np.sum(b & ~g))
    fn = int(np.sum(~b & g))
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    denom = beta2 * prec + rec
    return (1 + beta2) * prec * rec / denom if denom > 0 else 0.0


# -- enhanced alignment ------------------------------------------------------

def _alignment_mean(binary, g):
    gf = g.astype(np.float64)
    bf = binary.astype(np.float64)
    if g.sum() == 0:
        return 1.0 - bf.mean()
    if (~g).sum() == 0:
        return bf.mean()
    dg = gf - gf.mean()
    dp = bf - bf.mean()
    den = dg * dg + dp * dp
    phi = np.where(den > 0, 2.0 * dg * dp / np.where(den > 0, den, 1.0), 0.0)
    return float(((phi + 1.0) ** 2 / 4.0).mean())


def e_measure_dense(p, g, mode="adaptive"):
    """Per-pixel alignment maps at each threshold, then averaged."""
    g = g.astype(bool)
    pn = minmax(np.asarray(p, dtype=np.float64))
    if mode == "adaptive":
        return _alignment_mean(pn >= min(2.0 * pn.mean(), 1.0), g)
    curve = np.array([_alignment_mean(pn >= t, g) for t in THRESHOLDS])
    if mode == "curve":
        return curve
    return float(curve.max() if mode == "max" else curve.mean())


# -- structure measure -------------------------------------------------------

def _object_score(values):
    if values.size == 0:
        return 0.0
    x = float(np.mean(values))
    if values.size > 1:
        sigma = math.sqrt(float(np.sum((values - x) ** 2)) / (values.size - 1))
    else:
        sigma = 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _block_ssim(pb, gb):
    n = pb.size
    if n == 0:
        return 1.0
    x = float(np.mean(pb))
    y = float(np.mean(gb))
    if n > 1:
        sx = float(np.sum((pb - x) ** 2)) / (n - 1)
        sy = float(np.sum((gb - y) ** 2)) / (n - 1)
        sxy = float(np.sum((pb - x) * (gb - y))) / (n - 1)
    else:
        sx = sy = sxy = 0.0
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0.0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0.0 else 0.0


def s_measure_literal(p, g, alpha=0.5):
    p = np.asarray(p, dtype=np.float64)
    g = g.astype(bool)
    mu = float(g.mean())
    if mu == 0.0:
        return 1.0 - float(p.mean())
    if mu == 1.0:
        return float(p.mean())
    s_obj = mu * _object_score(p[g]) + (1.0 - mu) * _object_score((1.0 - p)[~g])
    ys, xs = np.nonzero(g)
    cy = int(round(float(np.mean(ys))))
    cx = int(round(float(np.mean(xs))))
    h, w = g.shape
    s_reg = 0.0
    for rows, cols in (
        (range(0, cy), range(0, cx)),
        (range(0, cy), range(cx, w)),
        (range(cy, h), range(0, cx)),
        (range(cy, h), range(cx, w)),
    ):
        pb = np.array([[p[r, c] for c in cols] for r in rows], dtype=np.float64)
        gb = np.array([[float(g[r, c]) for c in cols] for r in rows], dtype=np.float64)
        weight = (len(rows) * len(cols)) / float(h * w)
        if pb.size:
            s_reg += weight * _block_ssim(pb, gb)
    score = alpha * s_obj + (1.0 - alpha) * s_reg
    return float(min(1.0, max(0.0, score)))


# -- weighted F-measure ------------------------------------------------------

def _gaussian_7x5():
    k = np.zeros((7, 7))
    for i in range(7):
        for j in range(7):
            k[i, j] = math.exp(-((i - 3) ** 2 + (j - 3) ** 2) / (2.0 * 25.0))
    return k / k.sum()


def wfb_literal(p, g):
    p = np.asarray(p, dtype=np.float64)
    g = g.astype(bool)
    if not g.any():
        return 0.0
    gf = g.astype(np.float64)
    h, w = g.shape
    err = np.abs(p - gf)

    # nearest-foreground distances, recomputed by brute force; the tie choice
    # among equidistant pixels follows the library (validated to be a true
    # nearest neighbor)
    dist_lib, (iy, ix) = ndimage.distance_transform_edt(~g, return_indices=True)
    fg = np.argwhere(g)
    err_t = err.copy()
    dist = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if g[y, x]:
                continue
            d2 = (fg[:, 0] - y) ** 2 + (fg[:, 1] - x) ** 2
            dmin = float(d2.min())
            chosen = (int(iy[y, x]), int(ix[y, x]))
            lib_d2 = (chosen[0] - y) ** 2 + (chosen[1] - x) ** 2
            assert lib_d2 == dmin, "library nearest pixel is not a true nearest"
            dist[y, x] = math.sqrt(dmin)
            err_t[y, x] = err[chosen]
    assert np.allclose(dist, dist_lib, atol=1e-9)

    # explicit 7x7 Gaussian smoothing with zero padding
    kernel = _gaussian_7x5()
    padded = np.zeros((h + 6, w + 6))
    padded[3 : 3 + h, 3 : 3 + w] = err_t
    err_spread = np.zeros((h, w))
    for dy in range(7):
        for dx in range(7):
            err_spread += kernel[dy, dx] * padded[dy : dy + h, dx : dx + w]

    min_err = err.copy()
    sel = g & (err_spread < err)
    min_err[sel] = err_spread[sel]
    weight = np.ones((h, w))
    weight[~g] = 2.0 - np.exp(math.log(0.5) / 5.0 * dist[~g])
    err_w = min_err * weight

    n_fg = float(gf.sum())
    tp_w = n_fg - float(err_w[g].sum())
    fp_w = float(err_w[~g].sum())
    recall = 1.0 - float(err_w[g].mean())
    precision = tp_w / (EPS + tp_w + fp_w)
    return float(2.0 * precision * recall / (EPS + precision + recall))


def mae_scalar(p, g):
    total = 0.0
    for pi, gi in zip(np.ravel(p), np.ravel(np.asarray(g, dtype=np.float64))):
        total += abs(float(pi) - float(gi))
    return total / np.size(p)
