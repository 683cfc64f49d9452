"""Raster and binary-mask primitives in physical (mm) units.

All geometry downstream (erosion radii, band widths, chord lengths) is
specified in millimetres, so every image carries a pixel spacing.
Convention used everywhere: pixel ``(row, col)`` has its center at
``(x, y) = (col * sx, row * sy)`` mm, x growing along columns and y growing
image-downward along rows.

Binary masks are plain boolean ``(h, w)`` arrays; label masks are integer
arrays with values in {0 background, 1 eyeball, 2 optic nerve sheath}.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError

BACKGROUND = 0
EYEBALL = 1
SHEATH = 2

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Raster:
    """Single-channel grayscale frame with mm pixel spacing.

    Intensities are stored as floats but must lie in [0, 255].
    """

    pixels: np.ndarray
    spacing: tuple

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2 or px.size == 0:
            raise ValidationError("raster must be a non-empty 2-D array")
        sx, sy = self.spacing
        if not (sx > 0 and sy > 0):
            raise ValidationError("spacing must be positive")
        lo, hi = float(px.min()), float(px.max())
        if lo < 0.0 or hi > 255.0:
            raise ValidationError("intensities outside [0, 255]")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "spacing", (float(sx), float(sy)))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Line2D:
    """Infinite line in mm coordinates: anchor point plus unit direction.

    The direction is normalized so dy >= 0 (pointing image-downward); a
    perfectly horizontal line gets dx > 0.
    """

    point: tuple
    direction: tuple

    def __post_init__(self):
        dx, dy = self.direction
        if abs(math.hypot(dx, dy) - 1.0) > 1e-9:
            raise ValidationError("direction must be unit length")
        if dy < 0 or (dy == 0 and dx < 0):
            raise ValidationError("direction must satisfy dy >= 0")

    @classmethod
    def through(cls, point, direction):
        """Build a line from any non-zero direction, normalizing it."""
        dx, dy = float(direction[0]), float(direction[1])
        norm = math.hypot(dx, dy)
        if norm == 0.0:
            raise ValidationError("zero direction")
        dx, dy = dx / norm, dy / norm
        if dy < 0 or (dy == 0 and dx < 0):
            dx, dy = -dx, -dy
        return cls((float(point[0]), float(point[1])), (dx, dy))

    @property
    def normal(self):
        """Unit normal, the direction rotated by +90 degrees."""
        dx, dy = self.direction
        return (-dy, dx)


def _check_dims(a, b):
    if a.shape != b.shape:
        raise ValidationError("dimension mismatch")


def disk_radius_px(radius_mm, spacing):
    """Pixel radius of the structuring disk for a mm radius.

    Conservative under anisotropic spacing (uses the finer axis) and
    floored at 1 px so sub-spacing radii still act.
    """
    sx, sy = spacing
    if not (sx > 0 and sy > 0):
        raise ValidationError("spacing must be positive")
    return max(1, round(radius_mm / min(sx, sy)))


def morphology(mask, op, radius_mm, spacing):
    """Erode or dilate a mask by a discrete Euclidean disk of mm radius.

    The disk contains every integer offset with squared length <= r_px**2.
    Implemented by thresholding the exact squared Euclidean distance
    transform: a pixel survives erosion iff no background pixel (image
    border counts as background) lies within r_px of it; dilation is the
    dual. radius_mm == 0 is the identity.
    """
    if op not in ("erode", "dilate"):
        raise ValidationError(f"unknown morphology op: {op!r}")
    if radius_mm < 0:
        raise ValidationError("radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius_mm == 0:
        return mask.copy()
    r = disk_radius_px(radius_mm, spacing)
    pad = r + 1
    if op == "erode":
        padded = np.pad(mask, pad, constant_values=False)
    else:
        padded = np.pad(~mask, pad, constant_values=True)
    dist = ndimage.distance_transform_edt(padded)
    # squared distances between pixel centers are integers, so rounding
    # restores the exact value and the <= r**2 comparison is exact
    dist_sq = np.rint(dist * dist).astype(np.int64)
    outside_reach = dist_sq > r * r
    out = outside_reach if op == "erode" else ~outside_reach
    return out[pad:-pad, pad:-pad]


def band_masks(mask, band_mm, spacing):
    """Contour bands of width band_mm just inside and outside the mask.

    inner = mask minus its erosion, outer = dilation minus the mask; the
    two are disjoint by construction and hug the mask boundary.
    """
    mask = np.asarray(mask, dtype=bool)
    if band_mm <= 0:
        raise ValidationError("band width must be > 0")
    if int(mask.sum()) < 4:
        raise ValidationError("degenerate region")
    inner = mask & ~morphology(mask, "erode", band_mm, spacing)
    outer = morphology(mask, "dilate", band_mm, spacing) & ~mask
    return inner, outer


def masked_sum(raster, mask):
    """Sum of raster intensities over the mask; 0 for an empty mask."""
    mask = np.asarray(mask, dtype=bool)
    _check_dims(raster.pixels, mask)
    return float(raster.pixels[mask].sum())


def masked_mean(raster, mask):
    """Mean raster intensity over a non-empty mask."""
    mask = np.asarray(mask, dtype=bool)
    _check_dims(raster.pixels, mask)
    if not mask.any():
        raise ValidationError("empty mask mean")
    return float(raster.pixels[mask].mean())


def largest_component(mask):
    """Largest 8-connected component of a mask.

    Empty input gives an empty output. Ties go to the component whose
    first pixel comes earliest in row-major order (scipy labels components
    in scan order, so the first maximal label wins).
    """
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if count == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())[1:]
    best = int(np.argmax(sizes)) + 1
    return labels == best


def dice(a, b):
    """Dice overlap 2|A n B| / (|A| + |B|); two empty masks agree at 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_dims(a, b)
    size_a = int(a.sum())
    size_b = int(b.sum())
    if size_a + size_b == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (size_a + size_b)


def fit_line_tls(points):
    """Total-least-squares line through mm points.

    Returns ``(line, residual)`` where the line runs along the principal
    axis of the centered point cloud and the residual is the smaller
    eigenvalue of the 2x2 scatter matrix (sum of squared perpendicular
    distances).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(np.unique(pts, axis=0)) < 2:
        raise ValidationError("degenerate line fit")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scatter = centered.T @ centered
    evals, evecs = np.linalg.eigh(scatter)
    if evals[1] - evals[0] <= 1e-9 * max(evals[1], 1e-30):
        raise ValidationError("no principal axis")
    direction = evecs[:, 1]
    line = Line2D.through((centroid[0], centroid[1]), direction)
    return line, float(evals[0])
