"""Both kernel builds (jit and numpy) must agree; the numpy build is the
reference the jit one is checked against, plus hand-worked rasters where
the answer can be written down directly."""

import math

import numpy as np
import pytest

from sonotrainer import kernels


def test_both_paths_exist():
    assert kernels.warp_affine_u8_numpy is not None
    assert kernels.zhang_suen_numpy is not None
    assert kernels.min_dists_numpy is not None
    assert kernels.color_mask_numpy is not None
    assert kernels.composite_additive_numpy is not None
    if kernels.HAVE_NUMBA:
        assert kernels.warp_affine_u8 is kernels.warp_affine_u8_numba
    else:
        assert kernels.warp_affine_u8 is kernels.warp_affine_u8_numpy


# ---------------------------------------------------------------------------
# warp
# ---------------------------------------------------------------------------

def test_warp_identity_is_copy():
    rng = np.random.default_rng(0)
    src = rng.integers(0, 256, (12, 17, 3), dtype=np.uint8)
    inv = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    out, alpha = kernels.warp_affine_u8(src, inv, 12, 17, True, 0)
    assert np.array_equal(out, src)
    assert alpha.all()


def test_warp_quarter_turn_by_hand():
    # 2x2 source, rotate 90deg CCW about the pixel center (0.5, 0.5).
    # output (x,y) samples source at (y, 1-x): out[0,0]=src[1,0] etc.
    src = np.array([[[10], [20]], [[30], [40]]], dtype=np.uint8)
    inv = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    out, alpha = kernels.warp_affine_u8(src, inv, 2, 2, True, 0)
    assert alpha.all()
    assert out[0, 0, 0] == 30 and out[0, 1, 0] == 10
    assert out[1, 0, 0] == 40 and out[1, 1, 0] == 20


def test_warp_translation_fill_and_alpha():
    src = np.full((4, 4, 1), 200, np.uint8)
    # shift right by 2: left 2 columns of the output fall outside the source
    inv = np.array([[1.0, 0.0, -2.0], [0.0, 1.0, 0.0]])
    out, alpha = kernels.warp_affine_u8(src, inv, 4, 4, True, 7)
    assert not alpha[:, :2].any()
    assert alpha[:, 2:].all()
    assert (out[:, :2, 0] == 7).all()
    assert (out[:, 2:, 0] == 200).all()


def test_warp_half_pixel_bilinear_average():
    src = np.zeros((1, 2, 1), np.uint8)
    src[0, 0, 0] = 100
    src[0, 1, 0] = 200
    inv = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0]])
    out, alpha = kernels.warp_affine_u8(src, inv, 1, 1, True, 0)
    assert alpha[0, 0]
    assert out[0, 0, 0] == 150


def test_warp_numba_matches_numpy_nearest_exactly():
    if not kernels.HAVE_NUMBA:
        pytest.skip("numpy-only build")
    rng = np.random.default_rng(11)
    for _ in range(20):
        h, w = int(rng.integers(3, 24)), int(rng.integers(3, 24))
        src = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        ang = float(rng.uniform(-math.pi, math.pi))
        s = float(rng.uniform(0.4, 2.0))
        c, sn = s * math.cos(ang), s * math.sin(ang)
        inv = np.array([[c, -sn, rng.uniform(-3, 3)],
                        [sn, c, rng.uniform(-3, 3)]])
        a = kernels.warp_affine_u8_numpy(src, inv, 20, 20, False, 0)
        b = kernels.warp_affine_u8_numba(src, inv, 20, 20, False, 0)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])


def test_warp_numba_matches_numpy_bilinear_within_one_step():
    # fused multiply-add in the jit build can nudge a sample across the
    # rounding boundary; anything beyond one intensity step is a bug
    if not kernels.HAVE_NUMBA:
        pytest.skip("numpy-only build")
    rng = np.random.default_rng(12)
    worst = 0
    for _ in range(20):
        src = rng.integers(0, 256, (18, 18, 1), dtype=np.uint8)
        ang = float(rng.uniform(-1, 1))
        c, sn = math.cos(ang), math.sin(ang)
        inv = np.array([[c, -sn, rng.uniform(-2, 2)],
                        [sn, c, rng.uniform(-2, 2)]])
        a, aa = kernels.warp_affine_u8_numpy(src, inv, 16, 16, True, 0)
        b, ba = kernels.warp_affine_u8_numba(src, inv, 16, 16, True, 0)
        assert np.array_equal(aa, ba)
        diff = np.abs(a.astype(int) - b.astype(int))
        worst = max(worst, int(diff.max()))
    assert worst <= 1


# ---------------------------------------------------------------------------
# thinning
# ---------------------------------------------------------------------------

def _thin_reference(mask):
    """Straight transcription of the two-subiteration thinning rules,
    written independently of the kernel (dict neighborhood, python loops)."""
    img = mask.astype(np.uint8).copy()
    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            h, w = img.shape
            marks = []
            for y in range(1, h - 1):
                for x in range(1, w - 1):
                    if img[y, x] == 0:
                        continue
                    p2 = img[y - 1, x]
                    p3 = img[y - 1, x + 1]
                    p4 = img[y, x + 1]
                    p5 = img[y + 1, x + 1]
                    p6 = img[y + 1, x]
                    p7 = img[y + 1, x - 1]
                    p8 = img[y, x - 1]
                    p9 = img[y - 1, x - 1]
                    ring = [p2, p3, p4, p5, p6, p7, p8, p9]
                    bsum = sum(ring)
                    if not (2 <= bsum <= 6):
                        continue
                    trans = 0
                    for i in range(8):
                        if ring[i] == 0 and ring[(i + 1) % 8] == 1:
                            trans += 1
                    if trans != 1:
                        continue
                    if step == 0:
                        if p2 * p4 * p6 != 0 or p4 * p6 * p8 != 0:
                            continue
                    else:
                        if p2 * p4 * p8 != 0 or p2 * p6 * p8 != 0:
                            continue
                    marks.append((y, x))
            for (y, x) in marks:
                img[y, x] = 0
                changed = True
    return img.astype(bool)


def test_thinning_against_independent_reference():
    rng = np.random.default_rng(3)
    for trial in range(8):
        mask = np.zeros((20, 26), bool)
        # a couple of thick strokes
        y0 = int(rng.integers(3, 10))
        mask[y0:y0 + 4, 2:24] = True
        x0 = int(rng.integers(4, 18))
        mask[3:17, x0:x0 + 3] = True
        got = kernels.zhang_suen(mask)
        want = _thin_reference(mask)
        assert np.array_equal(got, want), f"trial {trial}"


def test_thinning_result_is_subset_and_idempotent():
    rng = np.random.default_rng(4)
    for _ in range(6):
        mask = rng.random((24, 24)) > 0.55
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = False
        thin = kernels.zhang_suen(mask)
        assert not (thin & ~mask).any()
        again = kernels.zhang_suen(thin)
        assert np.array_equal(thin, again)


def test_thinning_paths_agree():
    if not kernels.HAVE_NUMBA:
        pytest.skip("numpy-only build")
    rng = np.random.default_rng(5)
    for _ in range(6):
        mask = rng.random((18, 30)) > 0.5
        a = kernels.zhang_suen_numpy(mask)
        b = kernels.zhang_suen_numba(mask)
        assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# point distances
# ---------------------------------------------------------------------------

def test_min_dists_by_hand():
    a = np.array([[0.0, 0.0], [3.0, 4.0]])
    b = np.array([[0.0, 1.0], [3.0, 0.0]])
    d = kernels.min_dists(a, b)
    assert d[0] == 1.0
    assert d[1] == 4.0


def test_min_dists_paths_agree_to_ulp():
    if not kernels.HAVE_NUMBA:
        pytest.skip("numpy-only build")
    rng = np.random.default_rng(6)
    for _ in range(10):
        a = rng.uniform(-50, 50, (int(rng.integers(1, 40)), 2))
        b = rng.uniform(-50, 50, (int(rng.integers(1, 40)), 2))
        x = kernels.min_dists_numpy(a, b)
        y = kernels.min_dists_numba(a, b)
        assert np.max(np.abs(x - y)) < 1e-12


# ---------------------------------------------------------------------------
# color mask
# ---------------------------------------------------------------------------

def test_color_mask_picks_orange_not_gray():
    img = np.full((4, 4, 3), 128, np.uint8)
    img[1, 1] = (230, 120, 30)  # orange
    img[2, 2] = (30, 120, 230)  # blue
    m = kernels.color_mask(img, 10.0, 40.0, 0.45, 0.35)
    assert m[1, 1]
    assert not m[2, 2]
    assert m.sum() == 1


def test_color_mask_hue_boundaries_inclusive():
    # pure red has hue exactly 0, pure yellow exactly 60
    img = np.zeros((1, 2, 3), np.uint8)
    img[0, 0] = (255, 0, 0)
    img[0, 1] = (255, 255, 0)
    assert kernels.color_mask(img, 0.0, 60.0, 0.1, 0.1).all()
    m = kernels.color_mask(img, 0.0, 59.0, 0.1, 0.1)
    assert m[0, 0] and not m[0, 1]


def test_color_mask_paths_bit_identical():
    if not kernels.HAVE_NUMBA:
        pytest.skip("numpy-only build")
    rng = np.random.default_rng(7)
    for _ in range(10):
        img = rng.integers(0, 256, (23, 31, 3), dtype=np.uint8)
        a = kernels.color_mask_numpy(img, 10.0, 40.0, 0.45, 0.35)
        b = kernels.color_mask_numba(img, 10.0, 40.0, 0.45, 0.35)
        assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# additive blend
# ---------------------------------------------------------------------------

def test_composite_additive_single_pixel_arithmetic():
    base = np.array([[[100, 100, 100]]], np.uint8)
    us = np.array([[50]], np.uint8)
    pred = np.array([[200]], np.uint8)
    yes = np.ones((1, 1), bool)
    no = np.zeros((1, 1), bool)
    white = np.ones(3)
    # 0.5*100 + 0.5*50 + 0.25*200 = 125
    out = kernels.composite_additive(base, us, yes, pred, yes, 0.5, 0.5, 0.25, white)
    assert tuple(out[0, 0]) == (125, 125, 125)
    # alpha off: the layer contributes nothing
    out = kernels.composite_additive(base, us, no, pred, no, 0.5, 0.5, 0.25, white)
    assert tuple(out[0, 0]) == (50, 50, 50)
    # saturation clamps at 255
    out = kernels.composite_additive(base, us, yes, pred, yes, 2.0, 2.0, 2.0, white)
    assert tuple(out[0, 0]) == (255, 255, 255)


def test_composite_additive_tint_color():
    base = np.zeros((1, 1, 3), np.uint8)
    pred = np.array([[100]], np.uint8)
    yes = np.ones((1, 1), bool)
    red = np.array([1.0, 0.0, 0.0])
    out = kernels.composite_additive(base, np.zeros((1, 1), np.uint8), yes,
                                     pred, yes, 1.0, 0.0, 1.0, red)
    assert tuple(out[0, 0]) == (100, 0, 0)


def test_composite_additive_paths_byte_identical():
    if not kernels.HAVE_NUMBA:
        pytest.skip("numpy-only build")
    rng = np.random.default_rng(8)
    for _ in range(8):
        h, w = int(rng.integers(2, 20)), int(rng.integers(2, 20))
        base = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        us = rng.integers(0, 256, (h, w), dtype=np.uint8)
        pred = rng.integers(0, 256, (h, w), dtype=np.uint8)
        ua = rng.random((h, w)) > 0.3
        pa = rng.random((h, w)) > 0.3
        wr, wu, wp = rng.uniform(0, 1.5, 3)
        color = rng.uniform(0, 1, 3)
        a = kernels.composite_additive_numpy(base, us, ua, pred, pa, wr, wu, wp, color)
        b = kernels.composite_additive_numba(base, us, ua, pred, pa, wr, wu, wp, color)
        assert np.array_equal(a, b)
