"""Hot per-pixel kernels with numba and pure-numpy implementations.

Every kernel exists twice: ``<name>_numpy`` (vectorized numpy, always
available) and ``<name>_numba`` (@njit, compiled lazily, cached on disk).
The public name is bound to the numba build when numba imports cleanly,
unless the environment variable ``SONOTRAINER_NO_NUMBA=1`` forces the
numpy path. ``benchmarks/bench_kernels.py`` times both side by side.

Numba builds may differ from numpy by at most one intensity step on
bilinear samples (FMA contraction at the rounding boundary); nearest
sampling and thinning are byte-identical across paths.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("SONOTRAINER_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _env in {"1", "true", "yes"}

if not NUMBA_DISABLED:
    try:
        from numba import njit
        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dep
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA


# ---------------------------------------------------------------------------
# similarity / affine warp with inverse mapping
# ---------------------------------------------------------------------------

def warp_affine_u8_numpy(src: np.ndarray, inv: np.ndarray, out_h: int, out_w: int,
                         bilinear: bool = True, fill: int = 0):
    """Warp a (h, w, c) uint8 raster through the inverse map ``inv`` (2x3).

    Each output pixel (x, y) samples the source at
    ``(inv @ [x, y, 1])``; samples outside the source get ``fill`` and
    alpha False. Returns (out uint8 (out_h, out_w, c), alpha bool).
    """
    h, w, c = src.shape
    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]

    out = np.full((out_h, out_w, c), fill, np.uint8)
    if bilinear:
        alpha = (sx >= 0) & (sy >= 0) & (sx <= w - 1) & (sy <= h - 1)
        x0 = np.clip(np.floor(sx).astype(np.int64), 0, w - 1)
        y0 = np.clip(np.floor(sy).astype(np.int64), 0, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = (sx - x0)[..., None]
        fy = (sy - y0)[..., None]
        v = (src[y0, x0] * (1.0 - fx) * (1.0 - fy)
             + src[y0, x1] * fx * (1.0 - fy)
             + src[y1, x0] * (1.0 - fx) * fy
             + src[y1, x1] * fx * fy)
        sampled = np.floor(v + 0.5).astype(np.uint8)
        out[alpha] = sampled[alpha]
    else:
        xi = np.floor(sx + 0.5).astype(np.int64)
        yi = np.floor(sy + 0.5).astype(np.int64)
        alpha = (xi >= 0) & (yi >= 0) & (xi < w) & (yi < h)
        out[alpha] = src[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)][alpha]
    return out, alpha


if HAVE_NUMBA:

    @njit(cache=True)
    def warp_affine_u8_numba(src, inv, out_h, out_w, bilinear=True, fill=0):
        h, w, c = src.shape
        out = np.full((out_h, out_w, c), np.uint8(fill), np.uint8)
        alpha = np.zeros((out_h, out_w), np.bool_)
        for y in range(out_h):
            for x in range(out_w):
                sx = inv[0, 0] * x + inv[0, 1] * y + inv[0, 2]
                sy = inv[1, 0] * x + inv[1, 1] * y + inv[1, 2]
                if bilinear:
                    if sx < 0.0 or sy < 0.0 or sx > w - 1 or sy > h - 1:
                        continue
                    x0 = int(np.floor(sx))
                    y0 = int(np.floor(sy))
                    x1 = min(x0 + 1, w - 1)
                    y1 = min(y0 + 1, h - 1)
                    fx = sx - x0
                    fy = sy - y0
                    for k in range(c):
                        v = (src[y0, x0, k] * (1.0 - fx) * (1.0 - fy)
                             + src[y0, x1, k] * fx * (1.0 - fy)
                             + src[y1, x0, k] * (1.0 - fx) * fy
                             + src[y1, x1, k] * fx * fy)
                        out[y, x, k] = np.uint8(int(v + 0.5))
                    alpha[y, x] = True
                else:
                    xi = int(np.floor(sx + 0.5))
                    yi = int(np.floor(sy + 0.5))
                    if 0 <= xi < w and 0 <= yi < h:
                        for k in range(c):
                            out[y, x, k] = src[yi, xi, k]
                        alpha[y, x] = True
        return out, alpha

    warp_affine_u8 = warp_affine_u8_numba
else:
    warp_affine_u8 = warp_affine_u8_numpy


# ---------------------------------------------------------------------------
# Zhang-Suen thinning
# ---------------------------------------------------------------------------

def _thin_marks_numpy(mask: np.ndarray, step: int) -> np.ndarray:
    """Deletion marks for one thinning subiteration on a 0/1 uint8 mask."""
    p = np.pad(mask, 1)
    # P2..P9 clockwise starting north
    p2 = p[:-2, 1:-1]
    p3 = p[:-2, 2:]
    p4 = p[1:-1, 2:]
    p5 = p[2:, 2:]
    p6 = p[2:, 1:-1]
    p7 = p[2:, :-2]
    p8 = p[1:-1, :-2]
    p9 = p[:-2, :-2]
    ring = (p2, p3, p4, p5, p6, p7, p8, p9, p2)
    b = (p2.astype(np.uint8) + p3 + p4 + p5 + p6 + p7 + p8 + p9)
    a = np.zeros(mask.shape, np.uint8)
    for i in range(8):
        a += (ring[i] == 0) & (ring[i + 1] == 1)
    if step == 0:
        c1 = (p2 * p4 * p6) == 0
        c2 = (p4 * p6 * p8) == 0
    else:
        c1 = (p2 * p4 * p8) == 0
        c2 = (p2 * p6 * p8) == 0
    return (mask == 1) & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2


def zhang_suen_numpy(mask: np.ndarray) -> np.ndarray:
    """Two-subiteration thinning to a fixpoint. mask: bool or 0/1; returns bool."""
    m = mask.astype(np.uint8)
    while True:
        marks = _thin_marks_numpy(m, 0)
        m[marks] = 0
        n = int(marks.sum())
        marks = _thin_marks_numpy(m, 1)
        m[marks] = 0
        n += int(marks.sum())
        if n == 0:
            return m.astype(bool)


if HAVE_NUMBA:

    @njit(cache=True)
    def _thin_pass_numba(m, step):
        h, w = m.shape
        p = np.zeros((h + 2, w + 2), np.uint8)
        p[1:-1, 1:-1] = m
        marks = np.zeros((h, w), np.bool_)
        n = 0
        for y in range(1, h + 1):
            for x in range(1, w + 1):
                if p[y, x] == 0:
                    continue
                p2 = p[y - 1, x]
                p3 = p[y - 1, x + 1]
                p4 = p[y, x + 1]
                p5 = p[y + 1, x + 1]
                p6 = p[y + 1, x]
                p7 = p[y + 1, x - 1]
                p8 = p[y, x - 1]
                p9 = p[y - 1, x - 1]
                b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
                if b < 2 or b > 6:
                    continue
                a = 0
                if p2 == 0 and p3 == 1:
                    a += 1
                if p3 == 0 and p4 == 1:
                    a += 1
                if p4 == 0 and p5 == 1:
                    a += 1
                if p5 == 0 and p6 == 1:
                    a += 1
                if p6 == 0 and p7 == 1:
                    a += 1
                if p7 == 0 and p8 == 1:
                    a += 1
                if p8 == 0 and p9 == 1:
                    a += 1
                if p9 == 0 and p2 == 1:
                    a += 1
                if a != 1:
                    continue
                if step == 0:
                    if p2 * p4 * p6 != 0 or p4 * p6 * p8 != 0:
                        continue
                else:
                    if p2 * p4 * p8 != 0 or p2 * p6 * p8 != 0:
                        continue
                marks[y - 1, x - 1] = True
                n += 1
        return marks, n

    @njit(cache=True)
    def zhang_suen_numba(mask):
        m = mask.astype(np.uint8)
        while True:
            marks, n0 = _thin_pass_numba(m, 0)
            for y in range(m.shape[0]):
                for x in range(m.shape[1]):
                    if marks[y, x]:
                        m[y, x] = 0
            marks, n1 = _thin_pass_numba(m, 1)
            for y in range(m.shape[0]):
                for x in range(m.shape[1]):
                    if marks[y, x]:
                        m[y, x] = 0
            if n0 + n1 == 0:
                return m.astype(np.bool_)

    zhang_suen = zhang_suen_numba
else:
    zhang_suen = zhang_suen_numpy


# ---------------------------------------------------------------------------
# nearest-neighbor point distances (contour metrics)
# ---------------------------------------------------------------------------

def min_dists_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each point in a (n, 2), Euclidean distance to the closest b point."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(d2.min(axis=1))


if HAVE_NUMBA:

    @njit(cache=True)
    def min_dists_numba(a, b):
        n = a.shape[0]
        m = b.shape[0]
        out = np.empty(n, np.float64)
        for i in range(n):
            best = np.inf
            for j in range(m):
                dx = a[i, 0] - b[j, 0]
                dy = a[i, 1] - b[j, 1]
                d2 = dx * dx + dy * dy
                if d2 < best:
                    best = d2
            out[i] = np.sqrt(best)
        return out

    min_dists = min_dists_numba
else:
    min_dists = min_dists_numpy


# ---------------------------------------------------------------------------
# HSV band mask (marker color gate)
# ---------------------------------------------------------------------------

def color_mask_numpy(img: np.ndarray, hue_lo: float, hue_hi: float,
                     sat_min: float, val_min: float) -> np.ndarray:
    """Pixels of an (h, w, 3) uint8 image inside an HSV band, as bool.

    Hue in degrees [0, 360); all intermediate math in float32 on both
    paths so the masks agree bit for bit.
    """
    f = img.astype(np.float32) / np.float32(255.0)
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    mx = f.max(axis=2)
    mn = f.min(axis=2)
    d = mx - mn
    safe_d = np.where(d > 0, d, np.float32(1.0))
    h = np.select(
        [mx == r, mx == g],
        [(g - b) / safe_d % np.float32(6.0), (b - r) / safe_d + np.float32(2.0)],
        default=(r - g) / safe_d + np.float32(4.0),
    ) * np.float32(60.0)
    h[d == 0] = 0.0
    s = np.where(mx > 0, d / np.where(mx > 0, mx, np.float32(1.0)), np.float32(0.0))
    return ((h >= np.float32(hue_lo)) & (h <= np.float32(hue_hi))
            & (s >= np.float32(sat_min)) & (mx >= np.float32(val_min)))


if HAVE_NUMBA:

    @njit(cache=True)
    def color_mask_numba(img, hue_lo, hue_hi, sat_min, val_min):
        height, width = img.shape[0], img.shape[1]
        out = np.zeros((height, width), np.bool_)
        lo = np.float32(hue_lo)
        hi = np.float32(hue_hi)
        smin = np.float32(sat_min)
        vmin = np.float32(val_min)
        f255 = np.float32(255.0)
        zero = np.float32(0.0)
        six = np.float32(6.0)
        two = np.float32(2.0)
        four = np.float32(4.0)
        sixty = np.float32(60.0)
        for y in range(height):
            for x in range(width):
                r = np.float32(img[y, x, 0]) / f255
                g = np.float32(img[y, x, 1]) / f255
                b = np.float32(img[y, x, 2]) / f255
                mx = max(r, g, b)
                mn = min(r, g, b)
                d = mx - mn
                if d > zero:
                    if mx == r:
                        h = ((g - b) / d) % six
                    elif mx == g:
                        h = (b - r) / d + two
                    else:
                        h = (r - g) / d + four
                    h = h * sixty
                else:
                    h = zero
                s = d / mx if mx > zero else zero
                out[y, x] = (h >= lo) and (h <= hi) and (s >= smin) and (mx >= vmin)
        return out

    color_mask = color_mask_numba
else:
    color_mask = color_mask_numpy


# ---------------------------------------------------------------------------
# additive clamped blend (the per-bundle compositing hot path)
# ---------------------------------------------------------------------------

def composite_additive_numpy(base: np.ndarray, us: np.ndarray, us_alpha: np.ndarray,
                             pred: np.ndarray, pred_alpha: np.ndarray,
                             w_rgb: float, w_us: float, w_pred: float,
                             color: np.ndarray) -> np.ndarray:
    """clamp(w_rgb*base + w_us*us + w_pred*pred*color) over alpha-gated
    gray layers; base (h, w, 3) uint8, layers (h, w) uint8, color (3,)
    float64 in [0, 1]. Rounds half up. Both paths are byte-identical."""
    acc = w_rgb * base.astype(np.float64)
    us_vals = us.astype(np.float64)[..., None]
    pred_vals = pred.astype(np.float64)[..., None]
    acc[us_alpha] += w_us * us_vals[us_alpha]
    acc[pred_alpha] += w_pred * pred_vals[pred_alpha] * color
    out = np.clip(acc, 0.0, 255.0)
    return np.floor(out + 0.5).astype(np.uint8)


if HAVE_NUMBA:

    @njit(cache=True)
    def composite_additive_numba(base, us, us_alpha, pred, pred_alpha,
                                 w_rgb, w_us, w_pred, color):
        height, width = base.shape[0], base.shape[1]
        out = np.empty((height, width, 3), np.uint8)
        for y in range(height):
            for x in range(width):
                ua = us_alpha[y, x]
                pa = pred_alpha[y, x]
                uv = np.float64(us[y, x])
                pv = np.float64(pred[y, x])
                for c in range(3):
                    acc = w_rgb * np.float64(base[y, x, c])
                    if ua:
                        acc = acc + w_us * uv
                    if pa:
                        acc = acc + (w_pred * pv) * color[c]
                    if acc < 0.0:
                        acc = 0.0
                    elif acc > 255.0:
                        acc = 255.0
                    out[y, x, c] = np.uint8(np.floor(acc + 0.5))
        return out

    composite_additive = composite_additive_numba
else:
    composite_additive = composite_additive_numpy


def warm_up() -> None:
    """Force-compile the numba kernels on tiny inputs (no-op on numpy path)."""
    src = np.zeros((4, 4, 1), np.uint8)
    inv = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    warp_affine_u8(src, inv, 4, 4, True, 0)
    warp_affine_u8(src, inv, 4, 4, False, 0)
    zhang_suen(np.zeros((4, 4), np.bool_))
    min_dists(np.zeros((2, 2)), np.ones((2, 2)))
    color_mask(np.zeros((2, 2, 3), np.uint8), 0.0, 360.0, 0.0, 0.0)
    composite_additive(np.zeros((2, 2, 3), np.uint8),
                       np.zeros((2, 2), np.uint8), np.zeros((2, 2), np.bool_),
                       np.zeros((2, 2), np.uint8), np.zeros((2, 2), np.bool_),
                       1.0, 1.0, 1.0, np.ones(3, np.float64))
