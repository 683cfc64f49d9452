"""ICP grading: feature fusion, Lasso screening, classifiers, CV.

The 50-dimensional feature vector is 49 clinical features plus the
bilateral-mean ONSD. Per training fit (and per CV training fold):
median-impute, standardize, Lasso-select down to the target count, then
train the chosen classifier. The fitted pipeline serializes to a single
versioned JSON so inference reuses the training medians and stats.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .classifiers import CLASSIFIERS, ThresholdBaseline, train, train_threshold_baseline
from .cv import (
    CvReport,
    FoldResult,
    classification_metrics,
    confusion_matrix,
    stratified_folds,
)
from .lasso import LassoModel, lambda_max, lasso_fit, lasso_select

TIERS = ("normal", "mild", "severe")
NORMAL_LOW = 80.0
MILD_ABOVE = 180.0
SEVERE_ABOVE = 280.0
ONSD_FEATURE = "mean_onsd_mm"
TARGET_FEATURE_COUNT = 14
MODEL_FORMAT = 1

_STD_FLOOR = 1e-12

__all__ = [
    "TIERS",
    "IcpGrade",
    "icp_grade",
    "grade_index",
    "FeatureMatrix",
    "build_feature_matrix",
    "GradingModel",
    "fit_model",
    "predict",
    "cross_validate",
    "train",
    "train_threshold_baseline",
    "classification_metrics",
    "confusion_matrix",
    "stratified_folds",
    "CvReport",
    "FoldResult",
    "LassoModel",
    "lasso_fit",
    "lasso_select",
    "lambda_max",
    "CLASSIFIERS",
]


@dataclass(frozen=True)
class IcpGrade:
    """Three-tier ICP grade; ``below_band`` flags values under 80 mm H2O."""

    tier: str
    below_band: bool = False


def icp_grade(icp_mmH2O):
    """Band an ICP value: [80, 180] normal, (180, 280] mild, > 280 severe."""
    if not icp_mmH2O > 0:
        raise ValidationError("ICP must be positive")
    if icp_mmH2O > SEVERE_ABOVE:
        return IcpGrade("severe")
    if icp_mmH2O > MILD_ABOVE:
        return IcpGrade("mild")
    return IcpGrade("normal", below_band=icp_mmH2O < NORMAL_LOW)


def grade_index(tier):
    return TIERS.index(tier)


@dataclass
class FeatureMatrix:
    """Fused per-patient features: 49 clinical columns plus the ONSD column.

    ``values`` may hold NaN before imputation; fitting imputes from the
    training rows only.
    """

    values: np.ndarray
    col_names: list
    onsd_col: int
    patient_ids: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.col_names):
            raise ValidationError("feature matrix shape disagrees with column names")
        if not (0 <= self.onsd_col < len(self.col_names)):
            raise ValidationError("onsd column index out of range")


def build_feature_matrix(records, onsd_by_patient):
    """Join clinical records with bilateral-mean ONSD values.

    Patients without an ONSD value are skipped with a warning (e.g. a
    missing contralateral eye). Returns (matrix, icp_values).
    """
    rows, ids, icp = [], [], []
    names = None
    for record in records:
        if names is None:
            names = list(record.features)
        if record.patient_id not in onsd_by_patient:
            warnings.warn(
                f"patient {record.patient_id} has no ONSD measurement; skipped",
                stacklevel=2,
            )
            continue
        rows.append(
            [record.features[n] for n in names] + [onsd_by_patient[record.patient_id]]
        )
        ids.append(record.patient_id)
        icp.append(record.icp_mmH2O)
    if not rows:
        raise ValidationError("no patients with both clinical data and ONSD")
    matrix = FeatureMatrix(
        values=np.array(rows, dtype=float),
        col_names=names + [ONSD_FEATURE],
        onsd_col=len(names),
        patient_ids=ids,
    )
    return matrix, np.array(icp, dtype=float)


def _column_medians(values):
    medians = np.zeros(values.shape[1])
    for j in range(values.shape[1]):
        observed = values[:, j][~np.isnan(values[:, j])]
        if observed.size == 0:
            raise ValidationError(f"feature has no observed values: column {j}")
        ordered = np.sort(observed)
        mid = ordered.size // 2
        if ordered.size % 2:
            medians[j] = ordered[mid]
        else:
            medians[j] = 0.5 * (ordered[mid - 1] + ordered[mid])
    return medians


def _impute(values, medians):
    out = values.copy()
    nan_rows, nan_cols = np.nonzero(np.isnan(out))
    out[nan_rows, nan_cols] = medians[nan_cols]
    return out


@dataclass
class GradingModel:
    """Fitted grading pipeline: prep stats, feature mask, classifier."""

    kind: str
    classifier: object
    col_names: list
    onsd_col: int
    feature_mask: np.ndarray
    medians: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    seed: int
    params: dict = field(default_factory=dict)
    lasso_lambda: float | None = None

    def _prepare(self, raw_rows):
        imputed = _impute(np.asarray(raw_rows, dtype=float), self.medians)
        standardized = (imputed - self.means) / np.maximum(self.stds, _STD_FLOOR)
        return imputed, standardized

    def predict_scores(self, raw_rows):
        """Per-tier scores (rows sum to 1) for raw 50-column feature rows."""
        imputed, standardized = self._prepare(raw_rows)
        if self.kind == "threshold_baseline":
            scores3 = self.classifier.predict_scores(imputed[:, self.onsd_col])
        else:
            local = self.classifier.predict_scores(standardized[:, self.feature_mask])
            scores3 = np.zeros((len(local), 3))
            for pos, cls in enumerate(self.classifier.classes):
                scores3[:, cls] = local[:, pos]
        return scores3

    def predict_grades(self, raw_rows):
        return np.argmax(self.predict_scores(raw_rows), axis=1)

    def to_json(self, path):
        payload = {
            "format": MODEL_FORMAT,
            "kind": self.kind,
            "seed": self.seed,
            "params": self.params,
            "col_names": list(self.col_names),
            "onsd_col": self.onsd_col,
            "feature_mask": [bool(b) for b in self.feature_mask],
            "medians": self.medians.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "lasso_lambda": self.lasso_lambda,
            "classifier": self.classifier.to_dict(),
        }
        with open(path, "w") as handle:
            json.dump(payload, handle, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as handle:
            raw = json.load(handle)
        if raw.get("format") != MODEL_FORMAT:
            raise ValidationError(f"unsupported grading model format: {raw.get('format')}")
        classifier = CLASSIFIERS[raw["kind"]].from_dict(raw["classifier"])
        return cls(
            kind=raw["kind"],
            classifier=classifier,
            col_names=list(raw["col_names"]),
            onsd_col=int(raw["onsd_col"]),
            feature_mask=np.asarray(raw["feature_mask"], dtype=bool),
            medians=np.asarray(raw["medians"], dtype=float),
            means=np.asarray(raw["means"], dtype=float),
            stds=np.asarray(raw["stds"], dtype=float),
            seed=int(raw["seed"]),
            params=dict(raw.get("params", {})),
            lasso_lambda=raw.get("lasso_lambda"),
        )


def _fit_on(values, icp, grades, target_count, select=True):
    """Prep stats and Lasso feature mask from raw (possibly NaN) rows.

    ``select=False`` (threshold baseline) skips the Lasso pass; the
    baseline reads only the raw ONSD column.
    """
    medians = _column_medians(values)
    imputed = _impute(values, medians)
    means = imputed.mean(axis=0)
    stds = imputed.std(axis=0)
    standardized = (imputed - means) / np.maximum(stds, _STD_FLOOR)

    if not select:
        return medians, means, stds, standardized, imputed, None, None
    target = min(target_count, values.shape[1])
    lasso_target = icp if icp is not None else grades.astype(float)
    selection = lasso_select(standardized, lasso_target, target)
    mask = selection.selected
    if not mask.any():
        warnings.warn("lasso selected no features; keeping all", stacklevel=2)
        mask = np.ones(values.shape[1], dtype=bool)
    return medians, means, stds, standardized, imputed, mask, selection


def fit_model(
    matrix,
    icp_values,
    kind,
    params=None,
    seed=0,
    target_count=TARGET_FEATURE_COUNT,
):
    """Fit the full grading pipeline on every row of the feature matrix."""
    icp_values = np.asarray(icp_values, dtype=float)
    grades = np.array([grade_index(icp_grade(v).tier) for v in icp_values])
    select = kind != "threshold_baseline"
    medians, means, stds, standardized, imputed, mask, selection = _fit_on(
        matrix.values, icp_values, grades, target_count, select=select
    )
    if kind == "threshold_baseline":
        mask = np.ones(matrix.values.shape[1], dtype=bool)
        classifier = train(kind, imputed[:, matrix.onsd_col], grades, params, seed)
    else:
        classifier = train(kind, standardized[:, mask], grades, params, seed)
    return GradingModel(
        kind=kind,
        classifier=classifier,
        col_names=list(matrix.col_names),
        onsd_col=matrix.onsd_col,
        feature_mask=mask,
        medians=medians,
        means=means,
        stds=stds,
        seed=seed,
        params=dict(params or {}),
        lasso_lambda=None if selection is None else selection.lam,
    )


def predict(model, clinical, mean_onsd):
    """Grade one patient from a clinical record plus bilateral-mean ONSD.

    Returns (IcpGrade, {tier: score}) with scores summing to 1.
    """
    row = np.empty(len(model.col_names))
    for j, name in enumerate(model.col_names):
        if j == model.onsd_col:
            row[j] = mean_onsd
        elif name in clinical.features:
            row[j] = clinical.features[name]
        else:
            raise ValidationError(f"schema mismatch with model: missing {name!r}")
    scores = model.predict_scores(row[None, :])[0]
    tier = TIERS[int(np.argmax(scores))]
    return IcpGrade(tier), {t: float(s) for t, s in zip(TIERS, scores)}


def cross_validate(
    kind,
    matrix,
    icp_values,
    folds=5,
    seed=0,
    params=None,
    target_count=TARGET_FEATURE_COUNT,
    groups=None,
):
    """Patient-disjoint stratified K-fold evaluation of one classifier kind.

    Imputation, standardization and Lasso selection are refit on each
    training fold, so nothing leaks from held-out patients. When
    ``groups`` (e.g. patient ids for repeated visits) is given, all rows
    of a group stay in one fold; folds are stratified on the group's
    first grade.
    """
    icp_values = np.asarray(icp_values, dtype=float)
    grades = np.array([grade_index(icp_grade(v).tier) for v in icp_values])
    n = len(grades)
    if groups is None:
        groups = list(range(n))
    unique_groups = list(dict.fromkeys(groups))
    group_rows = {g: [i for i, gi in enumerate(groups) if gi == g] for g in unique_groups}
    group_grades = [grades[group_rows[g][0]] for g in unique_groups]
    test_folds = stratified_folds(group_grades, folds, seed)

    present = set(grades.tolist())
    report = CvReport(kind=kind)
    for fold_num, test_group_idx in enumerate(test_folds):
        test_rows = sorted(
            i for gi in test_group_idx for i in group_rows[unique_groups[gi]]
        )
        train_rows = sorted(set(range(n)) - set(test_rows))
        train_grades = grades[train_rows]
        if set(train_grades.tolist()) != present:
            missing = present - set(train_grades.tolist())
            raise ValidationError(
                f"class absent from training fold {fold_num}: {sorted(missing)}"
            )
        select = kind != "threshold_baseline"
        medians, means, stds, standardized, imputed, mask, selection = _fit_on(
            matrix.values[train_rows],
            icp_values[train_rows],
            train_grades,
            target_count,
            select=select,
        )
        thresholds = None
        if kind == "threshold_baseline":
            classifier = train(
                kind, imputed[:, matrix.onsd_col], train_grades, params, seed
            )
            thresholds = (classifier.t1, classifier.t2)
        else:
            classifier = train(kind, standardized[:, mask], train_grades, params, seed)

        test_values = _impute(matrix.values[test_rows], medians)
        if kind == "threshold_baseline":
            scores = classifier.predict_scores(test_values[:, matrix.onsd_col])
            predicted = np.argmax(scores, axis=1)
        else:
            test_std = (test_values - means) / np.maximum(stds, _STD_FLOOR)
            local = classifier.predict_scores(test_std[:, mask])
            predicted = np.array(
                [classifier.classes[i] for i in np.argmax(local, axis=1)]
            )
        confusion = confusion_matrix(grades[test_rows], predicted)
        accuracy, precision, recall, f1 = classification_metrics(confusion)
        report.folds.append(
            FoldResult(
                fold=fold_num,
                confusion=confusion,
                accuracy=accuracy,
                precision=precision,
                recall=recall,
                f1=f1,
                selected_count=None if mask is None else int(mask.sum()),
                thresholds=thresholds,
            )
        )
    return report
