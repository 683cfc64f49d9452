"""Geometric ONSD measurement and per-video aggregation.

Per frame: fit the sheath centerline, find its proximal intersection with
the eyeball, step 3 mm down the line, and measure the perpendicular chord
between the sheath edges. Per video: Tukey-fence the per-keyframe values
and keep the maximum survivor.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ValidationError
from .imaging import EYEBALL, SHEATH, fit_line_tls, largest_component
from .parallel import parallel_map

MEASUREMENT_DEPTH_MM = 3.0
MAX_CHORD_MM = 20.0
_COARSE_STEP_PX = 0.25
_REFINE_TOL_PX = 0.1


@dataclass(frozen=True)
class Centerline:
    """Fitted sheath axis with its arclength extent over the mask."""

    line: object
    extent: tuple
    fit_residual: float


@dataclass(frozen=True)
class OnsdMeasurement:
    """Single-frame chord measurement; all coordinates in mm."""

    frame_index: int
    globe_exit: tuple
    target: tuple
    p1: tuple
    p2: tuple
    onsd_mm: float


@dataclass(frozen=True)
class VideoOnsd:
    """Per-video aggregate: quartile fences plus the max kept value."""

    per_frame: tuple
    q1: float
    q3: float
    iqr: float
    kept: tuple
    onsd_mm: float


def _containing_pixel(point, spacing):
    return int(round(point[1] / spacing[1])), int(round(point[0] / spacing[0]))


def _point_in_mask(mask, point, spacing):
    row, col = _containing_pixel(point, spacing)
    if not (0 <= row < mask.shape[0] and 0 <= col < mask.shape[1]):
        return False
    return bool(mask[row, col])


def _point_in_image(shape, point, spacing):
    row, col = _containing_pixel(point, spacing)
    return 0 <= row < shape[0] and 0 <= col < shape[1]


_END_TRIM_FRACTION = 0.25


def extract_centerline(ons_mask, spacing):
    """Fit the sheath central line from per-row mask centroids.

    The largest connected component is used so speckle blobs in ingested
    masks cannot steer the fit. Rows where the sheath meets the globe or
    its distal tip cover only a corner of the band and drag their
    centroids off-axis, so after an initial fit the end quarters of the
    arclength range are dropped and the line refit on interior rows.
    Extent is the arclength range of all row centroids along the final
    line.
    """
    ons_mask = np.asarray(ons_mask, dtype=bool)
    main = largest_component(ons_mask)
    if not main.any():
        raise ValidationError("empty sheath mask")
    rows = np.flatnonzero(main.any(axis=1))
    if rows.size < 3:
        raise ValidationError("sheath too short")
    sx, sy = spacing
    points = np.array(
        [(np.flatnonzero(main[row]).mean() * sx, row * sy) for row in rows]
    )
    line, residual = fit_line_tls(points)
    for _ in range(2):
        t_values = (points - np.asarray(line.point)) @ np.asarray(line.direction)
        margin = _END_TRIM_FRACTION * (t_values.max() - t_values.min())
        keep = (t_values >= t_values.min() + margin) & (
            t_values <= t_values.max() - margin
        )
        if keep.sum() < 3:
            break
        try:
            line, residual = fit_line_tls(points[keep])
        except ValidationError:
            break
    t_values = (points - np.asarray(line.point)) @ np.asarray(line.direction)
    return Centerline(line, (float(t_values.min()), float(t_values.max())), residual)


def globe_intersection(centerline, eyeball_mask, spacing):
    """Proximal intersection of the centerline with the eyeball region.

    Marches from the top of the sheath extent against the line direction
    in quarter-pixel steps until a point lands on an eyeball pixel, then
    bisects the crossing to +-0.1 px. Returns mm coordinates.
    """
    eyeball_mask = np.asarray(eyeball_mask, dtype=bool)
    direction = np.asarray(centerline.line.direction)
    start = np.asarray(centerline.line.point) + centerline.extent[0] * direction
    step = _COARSE_STEP_PX * min(spacing)
    if _point_in_mask(eyeball_mask, start, spacing):
        return float(start[0]), float(start[1])
    outside = start
    probe = start
    while True:
        probe = probe - step * direction
        if not _point_in_image(eyeball_mask.shape, probe, spacing):
            raise ValidationError("no globe intersection")
        if _point_in_mask(eyeball_mask, probe, spacing):
            break
        outside = probe
    tol = _REFINE_TOL_PX * min(spacing)
    inside = probe
    while np.hypot(*(inside - outside)) > tol:
        mid = 0.5 * (inside + outside)
        if _point_in_mask(eyeball_mask, mid, spacing):
            inside = mid
        else:
            outside = mid
    hit = 0.5 * (inside + outside)
    return float(hit[0]), float(hit[1])


def _march_to_edge(mask, start, direction, spacing):
    """First mask-exit point from start along direction, refined to +-0.1 px."""
    step = _COARSE_STEP_PX * min(spacing)
    max_steps = int(MAX_CHORD_MM / step)
    inside = np.asarray(start, dtype=float)
    direction = np.asarray(direction, dtype=float)
    probe = inside
    for _ in range(max_steps):
        probe = probe + step * direction
        if not _point_in_mask(mask, probe, spacing):
            break
        inside = probe
    else:
        raise ValidationError("unbounded chord")
    outside = probe
    tol = _REFINE_TOL_PX * min(spacing)
    while np.hypot(*(outside - inside)) > tol:
        mid = 0.5 * (inside + outside)
        if _point_in_mask(mask, mid, spacing):
            inside = mid
        else:
            outside = mid
    edge = 0.5 * (inside + outside)
    return edge


def measure_frame_onsd(labels, spacing, frame_index=0):
    """Measure the sheath diameter 3 mm below the globe on one frame.

    Uses only the label mask: centerline -> globe intersection -> 3 mm
    offset along the line -> perpendicular chord between sheath edges.
    """
    labels = np.asarray(labels)
    eye_mask = labels == EYEBALL
    ons_mask = labels == SHEATH
    if not eye_mask.any() or not ons_mask.any():
        raise ValidationError("missing eyeball or sheath label")
    centerline = extract_centerline(ons_mask, spacing)
    eye_main = largest_component(eye_mask)
    exit_point = np.asarray(globe_intersection(centerline, eye_main, spacing))
    direction = np.asarray(centerline.line.direction)
    target = exit_point + MEASUREMENT_DEPTH_MM * direction
    ons_main = largest_component(ons_mask)
    if not _point_in_mask(ons_main, target, spacing):
        raise ValidationError("target off sheath")
    normal = np.asarray(centerline.line.normal)
    p1 = _march_to_edge(ons_main, target, normal, spacing)
    p2 = _march_to_edge(ons_main, target, -normal, spacing)
    onsd = float(math.hypot(p1[0] - p2[0], p1[1] - p2[1]))
    return OnsdMeasurement(
        frame_index=int(frame_index),
        globe_exit=(float(exit_point[0]), float(exit_point[1])),
        target=(float(target[0]), float(target[1])),
        p1=(float(p1[0]), float(p1[1])),
        p2=(float(p2[0]), float(p2[1])),
        onsd_mm=onsd,
    )


def _measure_worker(args):
    labels, spacing, index = args
    try:
        return index, measure_frame_onsd(labels, spacing, index), None
    except ValidationError as err:
        return index, None, str(err)


def measure_keyframes(bundle, indices, jobs=1):
    """Measure each keyframe of a bundle; failures are reported, not fatal.

    Returns (measurements, failures) where failures maps frame index to
    the reason the frame could not be measured.
    """
    tasks = []
    for idx in indices:
        if not (0 <= idx < len(bundle)):
            raise ValidationError(f"keyframe index {idx} out of range")
        tasks.append((bundle.masks[idx], bundle.spacing, int(idx)))
    results = parallel_map(_measure_worker, tasks, jobs)
    measurements, failures = [], {}
    for index, measurement, error in results:
        if measurement is None:
            failures[index] = error
        else:
            measurements.append(measurement)
    return measurements, failures


def _interpolated_quantile(ordered, fraction):
    position = fraction * (len(ordered) - 1)
    lower = int(math.floor(position))
    upper = min(lower + 1, len(ordered) - 1)
    weight = position - lower
    return ordered[lower] + weight * (ordered[upper] - ordered[lower])


def aggregate_video_onsd(values, k_fence=1.5, measurements=()):
    """Tukey-fence the per-frame values and keep the maximum survivor.

    Quartiles use linear interpolation at index p*(n-1). The fence
    constant is fixed at 1.5 in the pipeline; it is a parameter here only
    for sensitivity tests.
    """
    values = [float(v) for v in values]
    if not values:
        raise ValidationError("no measurements to aggregate")
    ordered = sorted(values)
    q1 = _interpolated_quantile(ordered, 0.25)
    q3 = _interpolated_quantile(ordered, 0.75)
    iqr = q3 - q1
    if math.isinf(k_fence):
        lo, hi = -math.inf, math.inf  # inf * 0 would poison zero-IQR inputs
    else:
        lo = q1 - k_fence * iqr
        hi = q3 + k_fence * iqr
    kept = tuple(v for v in values if lo <= v <= hi)
    return VideoOnsd(
        per_frame=tuple(measurements),
        q1=float(q1),
        q3=float(q3),
        iqr=float(iqr),
        kept=kept,
        onsd_mm=float(max(kept)),
    )


def bilateral_mean(left, right):
    """Mean of the two eyes' video-level ONSD values."""
    if left is None or right is None:
        raise ValidationError("missing eye")
    return 0.5 * (left.onsd_mm + right.onsd_mm)


def pearson(xs, ys):
    """Sample Pearson correlation with a two-sided Student-t p-value."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 3:
        raise ValidationError("need >= 3 paired samples")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    var_x = float(dx @ dx)
    var_y = float(dy @ dy)
    if var_x == 0.0 or var_y == 0.0:
        raise ValidationError("constant input")
    r = float(dx @ dy) / math.sqrt(var_x * var_y)
    r = max(-1.0, min(1.0, r))
    n = xs.size
    if abs(r) >= 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 2))
    return r, p
