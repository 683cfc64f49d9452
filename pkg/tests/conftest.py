import json

import numpy as np
import pytest

from onsdkit.imaging import Raster
from onsdkit.ingest import N_CLINICAL_FEATURES


def make_raster(pixels, spacing=(0.065, 0.065)):
    return Raster(np.asarray(pixels, dtype=float), spacing)


def uniform_raster(shape, value, spacing=(0.065, 0.065)):
    return Raster(np.full(shape, float(value)), spacing)


def feature_names():
    return [f"cf{i:02d}" for i in range(N_CLINICAL_FEATURES)]


def write_schema(path):
    path.write_text(json.dumps({"features": feature_names()}))
    return feature_names()


def write_clinical_csv(path, rows, names=None):
    """rows: list of (patient_id, feature_values, icp, mannitol, shunt)."""
    names = names or feature_names()
    lines = [",".join(["patient_id"] + names + ["icp_mmH2O", "mannitol", "shunt"])]
    for patient_id, values, icp, mann, shunt in rows:
        cells = [patient_id]
        for v in values:
            cells.append("" if v is None else str(v))
        cells += [str(icp), str(int(mann)), str(int(shunt))]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def rng():
    return np.random.default_rng(20250808)
