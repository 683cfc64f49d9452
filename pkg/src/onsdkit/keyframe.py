"""Frame quality scoring and keyframe ranking.

Each frame gets four rule scores derived from the consensus imaging
criteria:

  s1  intensity sum inside the eyeball after a 1.5 mm inward erosion
      (lens / anterior chamber showing -> large s1 -> lower priority)
  s2  mean-intensity step across the sheath contour, outer 0.1 mm band
      minus inner 0.1 mm band (sharper edge -> higher priority)
  s3  salience of the two-bright-three-dark pattern: the grayscale
      profile across the sheath, accumulated along the 3-5 mm segment
      below the globe, scored by the total peak-to-valley swing
  s4  tan of the centerline's angle from vertical (more horizontal ->
      larger s4 -> lower priority)

The total is a weighted sum of z-scored rule values; weights come either
from the published defaults or from a two-class LDA fit on annotated
optimal/suboptimal frames.
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import EmptyResultError, UnscorableFrame, ValidationError
from .imaging import (
    EYEBALL,
    SHEATH,
    Raster,
    band_masks,
    largest_component,
    masked_mean,
    masked_sum,
    morphology,
)
from .onsd import extract_centerline, globe_intersection
from .parallel import parallel_map

PAPER_WEIGHTS = (-0.2873, 0.3585, 0.1115, -0.1179)

RULE1_ERODE_MM = 1.5
RULE2_BAND_MM = 0.1
RULE3_WINDOW_MM = (3.0, 5.0)
RULE3_SMOOTH_MM = 0.3
RULE3_MAX_HALF_WIDTH_MM = 10.0
RULE4_MAX_ANGLE_DEG = 89.0
KEYFRAME_SET_SIZE = 5

_STD_FLOOR = 1e-9


@dataclass(frozen=True)
class RuleScores:
    s1: float
    s2: float
    s3: float
    s4: float

    def as_array(self):
        return np.array([self.s1, self.s2, self.s3, self.s4])


@dataclass(frozen=True)
class ScoringModel:
    """Weights plus z-score stats for the four rule values.

    ``norm_mean``/``norm_std`` are None for the paper-default model; in
    that case ranking falls back to per-video z-scoring.
    """

    weights: tuple
    norm_mean: tuple | None
    norm_std: tuple | None
    source: str

    @classmethod
    def paper_default(cls):
        return cls(PAPER_WEIGHTS, None, None, "paper_default")

    def with_stats(self, mean, std):
        return replace(self, norm_mean=tuple(mean), norm_std=tuple(std))

    def to_json(self, path):
        payload = {
            "weights": list(self.weights),
            "norm_mean": None if self.norm_mean is None else list(self.norm_mean),
            "norm_std": None if self.norm_std is None else list(self.norm_std),
            "source": self.source,
        }
        with open(path, "w") as handle:
            json.dump(payload, handle, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as handle:
            raw = json.load(handle)
        mean = raw.get("norm_mean")
        std = raw.get("norm_std")
        return cls(
            weights=tuple(raw["weights"]),
            norm_mean=None if mean is None else tuple(mean),
            norm_std=None if std is None else tuple(std),
            source=str(raw.get("source", "fitted")),
        )


@dataclass(frozen=True)
class FrameScore:
    frame_index: int
    rules: RuleScores
    zscores: tuple
    total: float


@dataclass(frozen=True)
class RankedFrames:
    """Scorable frames in descending total order plus the top-5 set."""

    scores: tuple
    keyframe_set: tuple
    unscorable: tuple


def rule1_lens_anterior(frame, labels):
    """Intensity sum in the eroded eyeball; 0 when erosion empties it."""
    eye_mask = labels == EYEBALL
    if not eye_mask.any():
        raise UnscorableFrame("no eyeball mask")
    core = morphology(eye_mask, "erode", RULE1_ERODE_MM, frame.spacing)
    return masked_sum(frame, core)


def rule2_edge_clarity(frame, labels):
    """Mean-intensity difference between the outer and inner contour bands."""
    ons_mask = labels == SHEATH
    if not ons_mask.any():
        raise UnscorableFrame("no sheath mask")
    try:
        inner, outer = band_masks(ons_mask, RULE2_BAND_MM, frame.spacing)
    except ValidationError as err:
        raise UnscorableFrame(str(err)) from None
    if not inner.any() or not outer.any():
        raise UnscorableFrame("empty edge band")
    return masked_mean(frame, outer) - masked_mean(frame, inner)


def _alternating_extrema_sum(profile):
    """Sum of peak-minus-valley over adjacent extrema, endpoints included.

    Plateaus are collapsed first so only strict turning points remain;
    the result equals the total variation over monotone runs.
    """
    profile = np.asarray(profile, dtype=float)
    changes = np.flatnonzero(np.diff(profile) != 0.0)
    if changes.size == 0:
        return 0.0
    compressed = np.concatenate([[profile[0]], profile[changes + 1]])
    signs = np.sign(np.diff(compressed))
    turning = np.flatnonzero(signs[1:] != signs[:-1]) + 1
    knots = np.concatenate([[compressed[0]], compressed[turning], [compressed[-1]]])
    return float(np.abs(np.diff(knots)).sum())


def rule3_two_bright_three_dark(frame, labels, centerline, globe_exit):
    """Salience of the bright/dark banding across the sheath.

    Builds the cross-sheath profile by summing intensities along the
    centerline over the 3-5 mm segment below the globe exit, one entry
    per pixel of perpendicular offset, using only samples whose pixel is
    sheath-labeled. The smoothed profile's alternating peak/valley swing
    is the score.
    """
    sx, sy = frame.spacing
    step = min(sx, sy)
    direction = np.asarray(centerline.line.direction)
    normal = np.asarray(centerline.line.normal)
    exit_point = np.asarray(globe_exit, dtype=float)

    t_lo, t_hi = RULE3_WINDOW_MM
    shape = frame.pixels.shape
    for t in (t_lo, t_hi):
        point = exit_point + t * direction
        row = int(round(point[1] / sy))
        col = int(round(point[0] / sx))
        if not (0 <= row < shape[0] and 0 <= col < shape[1]):
            raise UnscorableFrame("rule-3 window outside image")

    ons_mask = labels == SHEATH
    t_values = np.arange(t_lo, t_hi + step / 2, step)
    half_count = int(math.ceil(RULE3_MAX_HALF_WIDTH_MM / step))
    u_values = np.arange(-half_count, half_count + 1) * step

    centers = exit_point[None, :] + t_values[:, None] * direction[None, :]
    points = centers[:, None, :] + u_values[None, :, None] * normal[None, None, :]
    cols = np.rint(points[..., 0] / sx).astype(int)
    rows = np.rint(points[..., 1] / sy).astype(int)
    in_image = (rows >= 0) & (rows < shape[0]) & (cols >= 0) & (cols < shape[1])
    rows_safe = np.clip(rows, 0, shape[0] - 1)
    cols_safe = np.clip(cols, 0, shape[1] - 1)
    in_sheath = in_image & ons_mask[rows_safe, cols_safe]

    support = in_sheath.any(axis=0)
    if not support.any():
        raise UnscorableFrame("rule-3 window off sheath")
    first, last = np.flatnonzero(support)[[0, -1]]
    if last - first + 1 < 5:
        raise UnscorableFrame("rule-3 profile too short")

    samples = np.where(in_sheath, frame.pixels[rows_safe, cols_safe], 0.0)
    profile = samples.sum(axis=0)[first : last + 1]
    window = max(1, round(RULE3_SMOOTH_MM / step))
    smoothed = ndimage.uniform_filter1d(profile, size=window, mode="nearest")
    return _alternating_extrema_sum(smoothed)


def rule4_verticality(line):
    """tan of the angle from image-vertical, clamped at 89 degrees."""
    dx, dy = line.direction
    theta = math.degrees(math.atan2(abs(dx), dy))
    return math.tan(math.radians(min(theta, RULE4_MAX_ANGLE_DEG)))


def compute_rule_scores(frame, labels):
    """All four rule values for one frame, or None when unscorable."""
    labels = np.asarray(labels)
    if labels.shape != frame.pixels.shape:
        raise ValidationError("dimension mismatch")
    try:
        s1 = rule1_lens_anterior(frame, labels)
        s2 = rule2_edge_clarity(frame, labels)
        centerline = extract_centerline(labels == SHEATH, frame.spacing)
        eye_main = largest_component(labels == EYEBALL)
        if not eye_main.any():
            raise UnscorableFrame("no eyeball mask")
        exit_point = globe_intersection(centerline, eye_main, frame.spacing)
        s3 = rule3_two_bright_three_dark(frame, labels, centerline, exit_point)
        s4 = rule4_verticality(centerline.line)
    except (UnscorableFrame, ValidationError):
        return None
    return RuleScores(float(s1), float(s2), float(s3), float(s4))


def score_frame(rules, model):
    """Weighted sum of z-scored rule values under a stats-bearing model."""
    if model.norm_mean is None or model.norm_std is None:
        raise ValidationError("scoring model carries no normalization stats")
    z = _zscores(rules.as_array(), model)
    return float(np.dot(model.weights, z))


def _zscores(values, model):
    mean = np.asarray(model.norm_mean, dtype=float)
    std = np.maximum(np.asarray(model.norm_std, dtype=float), _STD_FLOOR)
    return (np.asarray(values, dtype=float) - mean) / std


def _rules_worker(args):
    pixels, labels, spacing, index = args
    return index, compute_rule_scores(Raster(pixels, spacing), labels)


def rank_frames(bundle, model, jobs=1):
    """Score every frame of a bundle and rank descending.

    Unscorable frames are excluded (they sort below everything by
    construction). A model without stored stats is completed with
    per-video z-score stats; a rule that is constant across the video
    then contributes zero to every total.
    """
    tasks = [
        (frame.pixels, labels, bundle.spacing, idx)
        for idx, (frame, labels) in enumerate(zip(bundle.frames, bundle.masks))
    ]
    results = parallel_map(_rules_worker, tasks, jobs)
    scored = [(idx, rules) for idx, rules in results if rules is not None]
    unscorable = tuple(idx for idx, rules in results if rules is None)
    if not scored:
        raise EmptyResultError("no scorable frames")

    effective = model
    if model.norm_mean is None or model.norm_std is None:
        matrix = np.array([rules.as_array() for _, rules in scored])
        effective = model.with_stats(matrix.mean(axis=0), matrix.std(axis=0))

    frame_scores = []
    for idx, rules in scored:
        z = _zscores(rules.as_array(), effective)
        total = float(np.dot(effective.weights, z))
        frame_scores.append(FrameScore(idx, rules, tuple(float(v) for v in z), total))
    frame_scores.sort(key=lambda fs: (-fs.total, fs.frame_index))
    top = tuple(fs.frame_index for fs in frame_scores[:KEYFRAME_SET_SIZE])
    return RankedFrames(tuple(frame_scores), top, unscorable)


def fit_lda(positives, negatives):
    """Fisher-direction weights from annotated optimal/suboptimal frames.

    Rule values are z-scored with pooled stats, then w is proportional to
    Sw^-1 (mu+ - mu-) with a small ridge on the pooled within-class
    scatter, scaled to unit norm and signed so positives score higher.
    """
    if len(positives) < 2 or len(negatives) < 2:
        raise ValidationError("insufficient annotations")
    pos = np.array([r.as_array() for r in positives], dtype=float)
    neg = np.array([r.as_array() for r in negatives], dtype=float)
    pooled = np.vstack([pos, neg])
    mean = pooled.mean(axis=0)
    std = np.maximum(pooled.std(axis=0), _STD_FLOOR)
    pos_z = (pos - mean) / std
    neg_z = (neg - mean) / std

    delta = pos_z.mean(axis=0) - neg_z.mean(axis=0)
    if not delta.any():
        raise ValidationError("degenerate LDA")
    scatter = np.zeros((4, 4))
    for cls in (pos_z, neg_z):
        centered = cls - cls.mean(axis=0)
        scatter += centered.T @ centered
    scatter += np.eye(4) * (1e-6 * np.trace(scatter) / 4.0)
    try:
        weights = np.linalg.solve(scatter, delta)
    except np.linalg.LinAlgError:
        raise ValidationError("degenerate LDA") from None
    norm = float(np.linalg.norm(weights))
    if not np.isfinite(weights).all() or norm == 0.0:
        raise ValidationError("degenerate LDA")
    weights = weights / norm
    if float(weights @ delta) < 0:
        weights = -weights
    return ScoringModel(
        weights=tuple(float(w) for w in weights),
        norm_mean=tuple(float(m) for m in mean),
        norm_std=tuple(float(s) for s in std),
        source="fitted",
    )


def topk_accuracy(predictions, ground_truths, k, tolerance=2):
    """Fraction of videos whose top-k ranking lands within +-2 frames.

    ``ground_truths`` entries may be a single index or a list; a hit on
    any annotated keyframe counts. Callers provide at least k ranked
    indices per video.
    """
    if k not in (1, 3, 5):
        raise ValidationError(f"k must be 1, 3, or 5, got {k}")
    if len(predictions) != len(ground_truths) or not predictions:
        raise ValidationError("predictions and ground truths must pair up")
    hits = 0
    for ranked, truth in zip(predictions, ground_truths):
        truths = truth if isinstance(truth, (list, tuple)) else (truth,)
        top = list(ranked)[:k]
        if any(abs(p - g) <= tolerance for p in top for g in truths):
            hits += 1
    return hits / len(predictions)
