import math

import numpy as np
import pytest

from onsdkit.errors import ValidationError
from onsdkit.imaging import (
    Line2D,
    band_masks,
    dice,
    disk_radius_px,
    fit_line_tls,
    largest_component,
    masked_mean,
    masked_sum,
    morphology,
)

from conftest import make_raster, uniform_raster

SP = (0.065, 0.065)


# ---------------------------------------------------------------- oracles

def disk_offsets(r_px):
    """All integer offsets with Euclidean length <= r_px."""
    out = []
    for di in range(-r_px, r_px + 1):
        for dj in range(-r_px, r_px + 1):
            if di * di + dj * dj <= r_px * r_px:
                out.append((di, dj))
    return out


def brute_morphology(mask, op, r_px):
    """Per-pixel structuring-element scan; out-of-image is background."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = np.zeros_like(mask)
    offsets = disk_offsets(r_px)
    for i in range(h):
        for j in range(w):
            if op == "erode":
                keep = True
                for di, dj in offsets:
                    ii, jj = i + di, j + dj
                    if not (0 <= ii < h and 0 <= jj < w) or not mask[ii, jj]:
                        keep = False
                        break
                out[i, j] = keep
            else:
                hit = False
                for di, dj in offsets:
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w and mask[ii, jj]:
                        hit = True
                        break
                out[i, j] = hit
    return out


def eigvec_2x2(points):
    """Closed-form principal axis of a 2-D scatter via the double angle."""
    pts = np.asarray(points, dtype=float)
    centered = pts - pts.mean(axis=0)
    sxx = (centered[:, 0] ** 2).sum()
    syy = (centered[:, 1] ** 2).sum()
    sxy = (centered[:, 0] * centered[:, 1]).sum()
    angle = 0.5 * math.atan2(2 * sxy, sxx - syy)
    return np.array([math.cos(angle), math.sin(angle)])


# ------------------------------------------------------------- morphology

def test_zero_radius_is_identity():
    mask = np.ones((100, 100), dtype=bool)
    assert (morphology(mask, "erode", 0.0, SP) == mask).all()
    assert (morphology(mask, "dilate", 0.0, SP) == mask).all()


def test_erode_solid_square_radius_two():
    # 0.1 mm at 0.065 mm/px -> r = round(1.538) = 2 -> side shrinks 20 -> 16
    assert disk_radius_px(0.1, SP) == 2
    mask = np.ones((20, 20), dtype=bool)
    eroded = morphology(mask, "erode", 0.1, SP)
    assert eroded.sum() == 16 * 16
    assert (eroded == brute_morphology(mask, "erode", 2)).all()


def test_dilate_single_pixel_radius_one():
    mask = np.zeros((9, 9), dtype=bool)
    mask[4, 4] = True
    dilated = morphology(mask, "dilate", 0.065, SP)
    assert dilated.sum() == 5  # 4-connected disk of radius 1
    assert (dilated == brute_morphology(mask, "dilate", 1)).all()


def test_morphology_matches_brute_force_on_random_masks(rng):
    for _ in range(8):
        mask = rng.random((24, 24)) < 0.45
        for op in ("erode", "dilate"):
            for radius_mm in (0.065, 0.13, 0.2):
                r_px = disk_radius_px(radius_mm, SP)
                got = morphology(mask, op, radius_mm, SP)
                want = brute_morphology(mask, op, r_px)
                assert (got == want).all(), (op, radius_mm)


def test_morphology_duality(rng):
    for _ in range(10):
        mask = rng.random((20, 20)) < 0.5
        for radius_mm in (0.0, 0.065, 0.2):
            eroded = morphology(mask, "erode", radius_mm, SP)
            dilated = morphology(mask, "dilate", radius_mm, SP)
            assert (eroded <= mask).all()
            assert (mask <= dilated).all()


def test_empty_mask_erode_is_empty_not_error():
    empty = np.zeros((10, 10), dtype=bool)
    assert not morphology(empty, "erode", 0.5, SP).any()


def test_morphology_rejects_bad_args():
    mask = np.ones((5, 5), dtype=bool)
    with pytest.raises(ValidationError):
        morphology(mask, "open", 0.1, SP)
    with pytest.raises(ValidationError):
        morphology(mask, "erode", -0.1, SP)


# ------------------------------------------------------------- band masks

def test_band_masks_on_disk():
    yy, xx = np.mgrid[0:32, 0:32]
    disk = (xx - 16) ** 2 + (yy - 16) ** 2 <= 10 * 10
    inner, outer = band_masks(disk, 0.1, SP)
    r = disk_radius_px(0.1, SP)
    want_inner = disk & ~brute_morphology(disk, "erode", r)
    want_outer = brute_morphology(disk, "dilate", r) & ~disk
    assert (inner == want_inner).all()
    assert (outer == want_outer).all()
    assert not (inner & outer).any()
    assert (inner <= disk).all()
    assert not (outer & disk).any()


def test_band_masks_thin_line_inner_is_line():
    mask = np.zeros((12, 12), dtype=bool)
    mask[6, 2:10] = True  # 1 px thin line: erosion empties it
    inner, outer = band_masks(mask, 0.1, SP)
    assert (inner == mask).all()


def test_band_masks_disjointness_random(rng):
    for _ in range(6):
        mask = rng.random((20, 20)) < 0.4
        if mask.sum() < 4:
            continue
        inner, outer = band_masks(mask, 0.13, SP)
        assert not (inner & outer).any()
        assert (inner <= mask).all()
        assert not (outer & mask).any()


def test_band_masks_degenerate_region():
    mask = np.zeros((8, 8), dtype=bool)
    mask[3, 3] = mask[3, 4] = mask[4, 3] = True  # only 3 px
    with pytest.raises(ValidationError, match="degenerate region"):
        band_masks(mask, 0.1, SP)


# -------------------------------------------------------- sums and means

def test_masked_sum_examples():
    raster = uniform_raster((5, 5), 10.0)
    mask = np.zeros((5, 5), dtype=bool)
    mask.ravel()[:7] = True
    assert masked_sum(raster, mask) == 70.0
    assert masked_sum(raster, np.zeros((5, 5), dtype=bool)) == 0.0


def test_masked_sum_checkerboard():
    board = np.indices((4, 4)).sum(axis=0) % 2 * 255.0
    raster = make_raster(board)
    assert masked_sum(raster, np.ones((4, 4), dtype=bool)) == 8 * 255


def test_masked_sum_additive_over_disjoint_masks(rng):
    raster = make_raster(rng.integers(0, 256, (12, 12)))
    split = rng.random((12, 12)) < 0.5
    m1 = split & (rng.random((12, 12)) < 0.7)
    m2 = ~split & (rng.random((12, 12)) < 0.7)
    total = masked_sum(raster, m1 | m2)
    assert total == pytest.approx(masked_sum(raster, m1) + masked_sum(raster, m2))


def test_masked_mean_examples():
    assert masked_mean(uniform_raster((4, 4), 42), np.ones((4, 4), bool)) == 42.0
    two = make_raster([[0.0, 255.0]])
    assert masked_mean(two, np.ones((1, 2), bool)) == 127.5
    gradient = make_raster(np.tile(np.arange(10.0)[:, None], (1, 3)))
    column = np.zeros((10, 3), dtype=bool)
    column[:, 1] = True
    assert masked_mean(gradient, column) == 4.5


def test_masked_mean_empty_raises():
    with pytest.raises(ValidationError, match="empty mask mean"):
        masked_mean(uniform_raster((3, 3), 1), np.zeros((3, 3), bool))


def test_dim_mismatch_raises():
    with pytest.raises(ValidationError, match="dimension mismatch"):
        masked_sum(uniform_raster((3, 3), 1), np.ones((4, 4), bool))


# ----------------------------------------------------- largest component

def test_largest_component_picks_bigger_blob():
    mask = np.zeros((10, 10), dtype=bool)
    mask[0:1, 0:5] = True      # 5 px
    mask[5:6, 5:8] = True      # 3 px
    out = largest_component(mask)
    assert out.sum() == 5
    assert out[0, 0]


def test_largest_component_empty():
    assert not largest_component(np.zeros((5, 5), bool)).any()


def test_largest_component_tie_breaks_row_major():
    mask = np.zeros((20, 20), dtype=bool)
    mask[0:2, 0:2] = True      # 4 px starting at (0, 0)
    mask[10:12, 10:12] = True  # 4 px starting at (10, 10)
    out = largest_component(mask)
    assert out[0, 0] and not out[10, 10]


# ------------------------------------------------------------------- dice

def test_dice_examples():
    m = np.zeros((6, 6), dtype=bool)
    m[2:4, 2:4] = True
    assert dice(m, m) == 1.0
    other = np.zeros((6, 6), dtype=bool)
    other[0, 0] = True
    assert dice(m, other) == 0.0
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[0, 0:4] = True
    b[0, 2:4] = b[1, 0:2] = True
    assert dice(a, b) == 0.5  # |A|=4 |B|=4 overlap 2


def test_dice_both_empty_is_one():
    empty = np.zeros((3, 3), dtype=bool)
    assert dice(empty, empty) == 1.0


def test_dice_symmetric_and_bounded(rng):
    for _ in range(20):
        a = rng.random((8, 8)) < 0.5
        b = rng.random((8, 8)) < 0.5
        d = dice(a, b)
        assert d == dice(b, a)
        assert 0.0 <= d <= 1.0


# ---------------------------------------------------------------- line fit

def test_fit_line_vertical():
    pts = [(3.0, y) for y in range(5)]
    line, residual = fit_line_tls(pts)
    assert line.point[0] == pytest.approx(3.0)
    assert line.direction == pytest.approx((0.0, 1.0))
    assert residual == pytest.approx(0.0, abs=1e-12)


def test_fit_line_diagonal():
    pts = [(v, v) for v in np.linspace(0, 4, 9)]
    line, _ = fit_line_tls(pts)
    assert line.direction == pytest.approx((math.sqrt(2) / 2, math.sqrt(2) / 2))


def test_fit_line_symmetric_noise_matches_noiseless():
    base = [(0.3 * k, 1.0 + 0.7 * k) for k in range(10)]
    clean, _ = fit_line_tls(base)
    normal = np.array(clean.normal)
    noisy = []
    for point in base:
        noisy.append(tuple(np.array(point) + 1e-3 * normal))
        noisy.append(tuple(np.array(point) - 1e-3 * normal))
    got, _ = fit_line_tls(noisy)
    assert got.direction == pytest.approx(clean.direction, abs=1e-9)


def test_fit_line_matches_closed_form_oracle(rng):
    for _ in range(20):
        direction = rng.normal(size=2)
        direction /= np.linalg.norm(direction)
        ts = rng.uniform(-3, 3, size=12)
        pts = np.outer(ts, direction) + rng.normal(scale=0.01, size=(12, 2))
        line, _ = fit_line_tls(pts)
        want = eigvec_2x2(pts)
        got = np.array(line.direction)
        assert min(np.linalg.norm(got - want), np.linalg.norm(got + want)) < 1e-9


def test_fit_line_errors():
    with pytest.raises(ValidationError, match="degenerate line fit"):
        fit_line_tls([(1.0, 1.0), (1.0, 1.0)])
    square = [(0, 0), (0, 1), (1, 0), (1, 1)]
    with pytest.raises(ValidationError, match="no principal axis"):
        fit_line_tls(square)


def test_fit_line_invariances(rng):
    pts = rng.normal(size=(15, 2)) * np.array([3.0, 0.3]) + np.array([2.0, 5.0])
    line, _ = fit_line_tls(pts)
    shuffled, _ = fit_line_tls(pts[rng.permutation(15)])
    assert shuffled.direction == pytest.approx(line.direction)
    assert shuffled.point == pytest.approx(line.point)
    shift = np.array([1.5, -2.5])
    moved, _ = fit_line_tls(pts + shift)
    assert moved.direction == pytest.approx(line.direction)
    assert np.asarray(moved.point) == pytest.approx(np.asarray(line.point) + shift)


def test_line2d_normalization():
    line = Line2D.through((0, 0), (0, -2))
    assert line.direction == (0.0, 1.0)
    flat = Line2D.through((1, 1), (-3, 0))
    assert flat.direction == (1.0, 0.0)
    with pytest.raises(ValidationError):
        Line2D.through((0, 0), (0, 0))
