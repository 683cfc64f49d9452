"""Synthetic fundus-ultrasound phantoms with exact ground-truth geometry.

A phantom frame is an anechoic eyeball disk on an echogenic orbit, with a
sheath band attached to the inferior globe boundary. Across the sheath
the intensity follows the two-bright-three-dark layout: dark nerve core,
bright subarachnoid bands, dark dural edges. Label masks derive from the
analytic shapes before any noise, so noise never moves a boundary.

Intensity values are display conventions picked to mimic B-mode
appearance, not physical quantities; speckle is a clipped multiplicative
Rayleigh model, adequate for exercising the scoring rules but nothing
like an acoustic simulation.
"""

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .imaging import EYEBALL, SHEATH, Raster
from .ingest import AnnotationSet, CaseBundle

INTENSITY = {
    "background": 90.0,
    "eyeball": 15.0,
    "nerve": 30.0,
    "subarachnoid": 170.0,
    "dura": 25.0,
}
DURA_THICKNESS_MM = 0.3


@dataclass(frozen=True)
class PhantomSpec:
    """Analytic scene description; lengths in mm, angles in degrees."""

    width: int = 420
    height: int = 420
    spacing: tuple = (0.065, 0.065)
    eye_center_mm: tuple = (13.6, 7.0)
    eye_radius_mm: float = 6.0
    tilt_deg: float = 0.0
    width_at_globe_mm: float = 5.0
    width_at_tip_mm: float | None = None
    sheath_length_mm: float = 9.0
    band_width_mm: float = 0.8
    band_contrast: float = 1.0
    sheath_visibility: float = 1.0
    lens: bool = False
    lens_intensity: float = 200.0
    lens_area_px: int = 300
    speckle_sigma: float = 0.0
    gaussian_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.tilt_deg < 45):
            raise ValidationError("tilt must be in [0, 45) degrees")
        if self.sheath_length_mm <= 3.0:
            raise ValidationError("sheath must extend past the 3 mm mark")
        if not (0 < self.sheath_visibility <= 1):
            raise ValidationError("sheath visibility must be in (0, 1]")

    def width_at(self, depth_mm):
        """Sheath width at an arclength depth below the globe exit."""
        if self.width_at_tip_mm is None:
            return self.width_at_globe_mm
        frac = np.clip(depth_mm / self.sheath_length_mm, 0.0, 1.0)
        return self.width_at_globe_mm + frac * (
            self.width_at_tip_mm - self.width_at_globe_mm
        )

    def to_json(self, path):
        payload = {k: getattr(self, k) for k in self.__dataclass_fields__}
        payload["spacing"] = list(self.spacing)
        payload["eye_center_mm"] = list(self.eye_center_mm)
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2))

    @classmethod
    def from_json(cls, path):
        raw = json.loads(Path(path).read_text())
        known = {k: raw[k] for k in cls.__dataclass_fields__ if k in raw}
        if "spacing" in known:
            known["spacing"] = tuple(known["spacing"])
        if "eye_center_mm" in known:
            known["eye_center_mm"] = tuple(known["eye_center_mm"])
        return cls(**known)


@dataclass(frozen=True)
class PhantomTruth:
    """Analytic ground truth the measurement pipeline must recover."""

    onsd_at_3mm: float
    theta_true_deg: float
    globe_exit_mm: tuple
    best_frame_index: int | None = None
    frame_quality: tuple | None = None

    def to_dict(self):
        return {
            "onsd_at_3mm": self.onsd_at_3mm,
            "theta_true_deg": self.theta_true_deg,
            "globe_exit_mm": list(self.globe_exit_mm),
            "best_frame_index": self.best_frame_index,
            "frame_quality": None
            if self.frame_quality is None
            else [dict(q) for q in self.frame_quality],
        }


def _check_geometry(spec):
    sx, sy = spec.spacing
    x_max = (spec.width - 1) * sx
    y_max = (spec.height - 1) * sy
    cx, cy = spec.eye_center_mm
    r = spec.eye_radius_mm
    theta = math.radians(spec.tilt_deg)
    d = np.array([math.sin(theta), math.cos(theta)])
    exit_point = np.array([cx, cy]) + r * d
    tip = exit_point + spec.sheath_length_mm * d
    half_w = max(spec.width_at(0.0), spec.width_at(spec.sheath_length_mm)) / 2.0
    normal = np.array([-d[1], d[0]])
    corners = [
        (cx - r, cy - r),
        (cx + r, cy + r),
        tuple(tip + half_w * normal),
        tuple(tip - half_w * normal),
        tuple(exit_point + half_w * normal),
        tuple(exit_point - half_w * normal),
    ]
    for x, y in corners:
        if not (0 <= x <= x_max and 0 <= y <= y_max):
            raise ValidationError("geometry overflow")
    return exit_point, d, normal


def generate_frame(spec, rng=None):
    """Render one phantom frame.

    Returns ``(raster, labels, truth)``; deterministic for a fixed seed.
    """
    exit_point, d, normal = _check_geometry(spec)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    sx, sy = spec.spacing
    rows, cols = np.mgrid[0 : spec.height, 0 : spec.width]
    x = cols * sx
    y = rows * sy

    cx, cy = spec.eye_center_mm
    eye = (x - cx) ** 2 + (y - cy) ** 2 <= spec.eye_radius_mm**2

    dx = x - exit_point[0]
    dy = y - exit_point[1]
    t = dx * d[0] + dy * d[1]
    u = dx * normal[0] + dy * normal[1]
    half_w = spec.width_at(np.clip(t, 0.0, spec.sheath_length_mm)) / 2.0
    sheath = (t >= 0) & (t <= spec.sheath_length_mm) & (np.abs(u) <= half_w) & ~eye

    img = np.full((spec.height, spec.width), INTENSITY["background"])
    img[eye] = INTENSITY["eyeball"]

    au = np.abs(u)
    dura = sheath & (au > half_w - DURA_THICKNESS_MM)
    band = sheath & ~dura & (au > half_w - DURA_THICKNESS_MM - spec.band_width_mm)
    nerve = sheath & ~dura & ~band
    band_value = INTENSITY["nerve"] + spec.band_contrast * (
        INTENSITY["subarachnoid"] - INTENSITY["nerve"]
    )
    img[nerve] = INTENSITY["nerve"]
    img[dura] = INTENSITY["dura"]
    img[band] = band_value
    if spec.sheath_visibility < 1.0:
        bg = INTENSITY["background"]
        img[sheath] = bg + spec.sheath_visibility * (img[sheath] - bg)

    if spec.lens:
        # bright ellipse (2:1 aspect) in the anterior chamber, area in px
        area_mm2 = spec.lens_area_px * sx * sy
        semi_minor = math.sqrt(area_mm2 / (2.0 * math.pi))
        semi_major = 2.0 * semi_minor
        lens_cy = cy - 0.45 * spec.eye_radius_mm
        inside = ((x - cx) / semi_major) ** 2 + ((y - lens_cy) / semi_minor) ** 2 <= 1.0
        img[inside & eye] = spec.lens_intensity

    labels = np.zeros((spec.height, spec.width), dtype=np.uint8)
    labels[eye] = EYEBALL
    labels[sheath] = SHEATH

    if spec.speckle_sigma > 0:
        # Rayleigh with unit mean, blended by the speckle strength
        rayleigh = rng.rayleigh(scale=math.sqrt(2.0 / math.pi), size=img.shape)
        img = img * (1.0 + spec.speckle_sigma * (rayleigh - 1.0))
    if spec.gaussian_sigma > 0:
        img = img + rng.normal(0.0, spec.gaussian_sigma, size=img.shape)
    img = np.clip(np.rint(img), 0, 255)

    truth = PhantomTruth(
        onsd_at_3mm=float(spec.width_at(3.0)),
        theta_true_deg=spec.tilt_deg,
        globe_exit_mm=(float(exit_point[0]), float(exit_point[1])),
    )
    return Raster(img, spec.spacing), labels, truth


@dataclass(frozen=True)
class QualitySchedule:
    """Degradation ranges for video mode; the best frame gets none of them.

    ``width_scale`` perturbs the rendered sheath width of degraded frames
    (off-axis views and fuzzy boundaries read wide or narrow), with an
    occasional gross outlier, so per-frame measurements spread the way
    real keyframe sets do.
    """

    contrast: tuple = (0.05, 0.55)
    visibility: tuple = (0.3, 0.8)
    tilt_jitter_deg: tuple = (2.0, 8.0)
    lens_probability: float = 0.5
    extra_speckle: tuple = (0.05, 0.25)
    width_scale: tuple = (0.98, 1.02)
    width_outlier_probability: float = 0.25
    width_outlier_scale: tuple = (0.55, 0.75)
    best_frame_index: int | None = None


def generate_video(
    spec,
    n_frames,
    schedule=None,
    case_id="phantom",
    eye="left",
    icp_mmH2O=None,
):
    """Render a video bundle with exactly one maximal-quality frame.

    Every other frame draws degradations (band-contrast fade, washed-out
    sheath, tilt jitter, lens intrusion, extra speckle) from the schedule.
    The best frame is annotated as keyframe, the analytically worst as
    suboptimal. Deterministic for a fixed spec seed.
    """
    if n_frames < 5:
        raise ValidationError("video mode needs at least 5 frames")
    schedule = schedule or QualitySchedule()
    master = np.random.default_rng([spec.seed, 0x5EED])
    best = (
        int(master.integers(n_frames))
        if schedule.best_frame_index is None
        else int(schedule.best_frame_index)
    )
    if not (0 <= best < n_frames):
        raise ValidationError("best frame index out of range")

    frames, masks, quality = [], [], []
    for i in range(n_frames):
        if i == best:
            frame_spec = replace(
                spec, band_contrast=1.0, sheath_visibility=1.0, lens=False
            )
            q = {"frame": i, "contrast": 1.0, "visibility": 1.0,
                 "tilt_deg": spec.tilt_deg, "lens": False, "extra_speckle": 0.0,
                 "width_scale": 1.0}
        else:
            contrast = float(master.uniform(*schedule.contrast))
            visibility = float(master.uniform(*schedule.visibility))
            jitter = float(master.uniform(*schedule.tilt_jitter_deg))
            tilt = min(spec.tilt_deg + jitter, 44.9)
            lens = bool(master.random() < schedule.lens_probability)
            extra = float(master.uniform(*schedule.extra_speckle))
            if master.random() < schedule.width_outlier_probability:
                scale = float(master.uniform(*schedule.width_outlier_scale))
            else:
                scale = float(master.uniform(*schedule.width_scale))
            frame_spec = replace(
                spec,
                band_contrast=contrast,
                sheath_visibility=visibility,
                tilt_deg=tilt,
                lens=lens,
                speckle_sigma=spec.speckle_sigma + extra,
                width_at_globe_mm=scale * spec.width_at_globe_mm,
                width_at_tip_mm=None
                if spec.width_at_tip_mm is None
                else scale * spec.width_at_tip_mm,
            )
            q = {"frame": i, "contrast": contrast, "visibility": visibility,
                 "tilt_deg": tilt, "lens": lens, "extra_speckle": extra,
                 "width_scale": scale}
        raster, labels, _ = generate_frame(
            frame_spec, rng=np.random.default_rng([spec.seed, i])
        )
        frames.append(raster)
        masks.append(labels)
        quality.append(q)

    def analytic_quality(q):
        return (
            0.5 * q["visibility"]
            + 0.5 * q["contrast"]
            - 0.5 * q["lens"]
            - 0.2 * q["tilt_deg"] / 45.0
            - 0.3 * q["extra_speckle"]
        )

    worst = min(range(n_frames), key=lambda i: (analytic_quality(quality[i]), i))
    annotations = AnnotationSet(keyframes=(best,), suboptimal=(worst,))
    bundle = CaseBundle(
        case_id=case_id,
        eye=eye,
        frames=frames,
        masks=masks,
        spacing=spec.spacing,
        annotations=annotations,
        icp_mmH2O=icp_mmH2O,
    )
    exit_point, _, _ = _check_geometry(spec)
    truth = PhantomTruth(
        onsd_at_3mm=float(spec.width_at(3.0)),
        theta_true_deg=spec.tilt_deg,
        globe_exit_mm=(float(exit_point[0]), float(exit_point[1])),
        best_frame_index=best,
        frame_quality=tuple(quality),
    )
    return bundle, truth
