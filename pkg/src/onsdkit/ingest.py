"""Case-bundle and clinical-table I/O.

On-disk bundle layout::

    case_dir/
      meta.json          {"case_id": str, "eye": "left"|"right",
                          "spacing_mm": [sx, sy], "icp_mmH2O": number|null}
      frames/0000.pgm    8-bit grayscale frames (PNG also accepted)
      masks/0000.png     single-channel label images, values {0, 1, 2}
      annotations.json   optional {"keyframes": [...], "suboptimal": [...]}

Frames and masks pair up by the numeric part of the filename and indices
must be contiguous from 0. DICOM is deliberately not handled: export
frames to PGM/PNG with an external tool (e.g. any DICOM toolkit's
image-export command) before building a bundle.

The clinical table is an RFC-4180 CSV whose header is
``patient_id, <49 feature columns in schema order>, icp_mmH2O, mannitol,
shunt``; the companion schema JSON lists the 49 feature names. Empty
feature cells are explicit missing values (NaN).
"""

import csv
import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .imaging import Raster

N_CLINICAL_FEATURES = 49

_FRAME_SUFFIXES = (".pgm", ".png")
_TRUE_WORDS = {"1", "true", "yes", "y"}
_FALSE_WORDS = {"0", "false", "no", "n", ""}


@dataclass(frozen=True)
class AnnotationSet:
    """Physician frame annotations: classic keyframes and suboptimal frames."""

    keyframes: tuple
    suboptimal: tuple

    def validate(self, n_frames):
        indices = list(self.keyframes) + list(self.suboptimal)
        if not indices or len(indices) > 10:
            raise ValidationError("annotations must contain 1-10 frame indices")
        for idx in indices:
            if not (0 <= idx < n_frames):
                raise ValidationError(f"annotation index {idx} out of range")
        if set(self.keyframes) & set(self.suboptimal):
            raise ValidationError("keyframe and suboptimal annotations overlap")


@dataclass
class CaseBundle:
    """One eye's video: frames, label masks and metadata."""

    case_id: str
    eye: str
    frames: list
    masks: list
    spacing: tuple
    annotations: AnnotationSet | None = None
    icp_mmH2O: float | None = None

    def __post_init__(self):
        if self.eye not in ("left", "right"):
            raise ValidationError(f"eye must be 'left' or 'right', got {self.eye!r}")
        if len(self.frames) != len(self.masks) or not self.frames:
            raise ValidationError("bundle needs equal, non-zero frame and mask counts")
        shape = self.frames[0].pixels.shape
        for frame, mask in zip(self.frames, self.masks):
            if frame.pixels.shape != shape or mask.shape != shape:
                raise ValidationError("dimension mismatch")
            if frame.spacing != tuple(self.spacing):
                raise ValidationError("frames disagree on spacing")
        if self.annotations is not None:
            self.annotations.validate(len(self.frames))

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class ClinicalRecord:
    """One patient's clinical feature row plus the lumbar-puncture ICP."""

    patient_id: str
    features: dict
    icp_mmH2O: float
    excluded_mannitol: bool = False
    excluded_shunt: bool = False


def _indexed_files(directory, suffixes):
    found = {}
    if not directory.is_dir():
        return found
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in suffixes:
            continue
        match = re.fullmatch(r"(\d+)", path.stem)
        if match is None:
            continue
        found[int(match.group(1))] = path
    return found


def _load_gray(path):
    with Image.open(path) as img:
        if img.mode not in ("L", "P", "I", "I;16"):
            img = img.convert("L")
        return np.asarray(img)


def load_case(directory):
    """Load and validate a case bundle from disk."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise ValidationError(f"bundle incomplete: {meta_path} missing")
    meta = json.loads(meta_path.read_text())
    if "spacing_mm" not in meta or meta["spacing_mm"] is None:
        raise ValidationError("missing spacing")
    sx, sy = meta["spacing_mm"]
    spacing = (float(sx), float(sy))

    frame_files = _indexed_files(directory / "frames", _FRAME_SUFFIXES)
    mask_files = _indexed_files(directory / "masks", (".png",))
    if not frame_files:
        raise ValidationError("bundle incomplete: no frames")
    if set(frame_files) != set(mask_files):
        raise ValidationError("bundle incomplete: frame/mask indices differ")
    if sorted(frame_files) != list(range(len(frame_files))):
        raise ValidationError("bundle incomplete: frame indices not contiguous from 0")

    frames, masks = [], []
    for idx in range(len(frame_files)):
        pixels = _load_gray(frame_files[idx]).astype(float)
        frames.append(Raster(pixels, spacing))
        labels = np.asarray(_load_gray(mask_files[idx]))
        if not np.isin(labels, (0, 1, 2)).all():
            bad = sorted(set(np.unique(labels)) - {0, 1, 2})
            raise ValidationError(f"invalid label: {bad} in {mask_files[idx].name}")
        masks.append(labels.astype(np.uint8))

    annotations = None
    ann_path = directory / "annotations.json"
    if ann_path.is_file():
        raw = json.loads(ann_path.read_text())
        annotations = AnnotationSet(
            keyframes=tuple(int(i) for i in raw.get("keyframes", [])),
            suboptimal=tuple(int(i) for i in raw.get("suboptimal", [])),
        )

    icp = meta.get("icp_mmH2O")
    return CaseBundle(
        case_id=str(meta.get("case_id", directory.name)),
        eye=str(meta.get("eye", "left")),
        frames=frames,
        masks=masks,
        spacing=spacing,
        annotations=annotations,
        icp_mmH2O=None if icp is None else float(icp),
    )


def write_case(bundle, directory):
    """Write a bundle to disk in the layout load_case expects.

    Frame intensities are rounded to 8-bit, so integer-valued rasters
    round-trip bit-exactly.
    """
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    meta = {
        "case_id": bundle.case_id,
        "eye": bundle.eye,
        "spacing_mm": list(bundle.spacing),
        "icp_mmH2O": bundle.icp_mmH2O,
    }
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2))
    for idx, (frame, labels) in enumerate(zip(bundle.frames, bundle.masks)):
        data = np.clip(np.rint(frame.pixels), 0, 255).astype(np.uint8)
        Image.fromarray(data, mode="L").save(directory / "frames" / f"{idx:04d}.pgm")
        Image.fromarray(labels.astype(np.uint8), mode="L").save(
            directory / "masks" / f"{idx:04d}.png"
        )
    if bundle.annotations is not None:
        payload = {
            "keyframes": list(bundle.annotations.keyframes),
            "suboptimal": list(bundle.annotations.suboptimal),
        }
        (directory / "annotations.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2)
        )
    return directory


def load_schema(schema_path):
    """Read the ordered clinical feature names from a schema JSON."""
    raw = json.loads(Path(schema_path).read_text())
    names = raw["features"] if isinstance(raw, dict) else raw
    names = [str(n) for n in names]
    if len(names) != N_CLINICAL_FEATURES:
        raise ValidationError(
            f"schema mismatch: expected {N_CLINICAL_FEATURES} features, got {len(names)}"
        )
    if len(set(names)) != len(names):
        raise ValidationError("schema mismatch: duplicate feature names")
    return names


def _parse_bool(cell, row, col):
    word = cell.strip().lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise ValidationError(f"parse error at row {row}, column {col}: {cell!r}")


def load_clinical_table(csv_path, schema_path):
    """Load clinical records against a feature schema.

    Empty feature cells become NaN (explicit missing); any other
    non-numeric cell is a parse error that names the row and column.
    """
    names = load_schema(schema_path)
    expected = ["patient_id"] + names + ["icp_mmH2O", "mannitol", "shunt"]
    records = []
    with open(csv_path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("schema mismatch: empty clinical CSV") from None
        if header != expected:
            raise ValidationError("schema mismatch: clinical CSV header differs from schema")
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ValidationError(f"parse error at row {row_num}: wrong column count")
            features = {}
            for name, cell in zip(names, row[1 : 1 + len(names)]):
                cell = cell.strip()
                if cell == "":
                    features[name] = math.nan
                    continue
                try:
                    features[name] = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"parse error at row {row_num}, column {name}: {cell!r}"
                    ) from None
            try:
                icp = float(row[1 + len(names)])
            except ValueError:
                raise ValidationError(
                    f"parse error at row {row_num}, column icp_mmH2O"
                ) from None
            if not icp > 0:
                raise ValidationError(
                    f"parse error at row {row_num}, column icp_mmH2O: must be > 0"
                )
            records.append(
                ClinicalRecord(
                    patient_id=row[0],
                    features=features,
                    icp_mmH2O=icp,
                    excluded_mannitol=_parse_bool(row[-2], row_num, "mannitol"),
                    excluded_shunt=_parse_bool(row[-1], row_num, "shunt"),
                )
            )
    return records


def apply_exclusions(records):
    """Drop patients flagged for mannitol or shunt, preserving order."""
    return [
        r for r in records if not r.excluded_mannitol and not r.excluded_shunt
    ]


def _median(values):
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return float(ordered[mid])
    return 0.5 * (ordered[mid - 1] + ordered[mid])


def impute_missing(records, strategy="median"):
    """Replace missing feature cells by the per-feature median.

    Only cells marked missing change; an all-missing feature is an error.
    """
    if strategy != "median":
        raise ValidationError(f"unknown imputation strategy: {strategy!r}")
    if not records:
        return []
    names = list(records[0].features)
    medians = {}
    for name in names:
        observed = [r.features[name] for r in records if not math.isnan(r.features[name])]
        if not observed:
            raise ValidationError(f"feature has no observed values: {name}")
        medians[name] = _median(observed)
    out = []
    for record in records:
        features = {
            name: (medians[name] if math.isnan(value) else value)
            for name, value in record.features.items()
        }
        out.append(replace(record, features=features))
    return out
