import json
import math
import warnings

import numpy as np
import pytest

from onsdkit.errors import ValidationError
from onsdkit.grading import (
    FeatureMatrix,
    GradingModel,
    build_feature_matrix,
    classification_metrics,
    cross_validate,
    fit_model,
    grade_index,
    icp_grade,
    lasso_fit,
    lasso_select,
    predict,
    stratified_folds,
    train,
    train_threshold_baseline,
)
from onsdkit.grading.classifiers import ThresholdBaseline
from onsdkit.grading.lasso import lambda_max, soft_threshold
from onsdkit.ingest import ClinicalRecord

from conftest import feature_names


# ---------------------------------------------------------------- oracles

def brute_threshold_search(values, grades, step=0.01):
    lo = round((min(values) - step) * 100)
    hi = round((max(values) + step) * 100)
    grid = [c / 100 for c in range(lo, hi + 1)]
    best = None
    for i, t1 in enumerate(grid):
        for t2 in grid[i + 1 :]:
            correct = 0
            for v, g in zip(values, grades):
                pred = 0 if v <= t1 else (1 if v <= t2 else 2)
                correct += pred == g
            key = (-correct, t1, t2)
            if best is None or key < best:
                best = key
    return best[1], best[2]


def normal_equations(X, y):
    yc = y - y.mean()
    return np.linalg.solve(X.T @ X, X.T @ yc)


# ------------------------------------------------------------------- bands

def test_icp_grade_bands():
    assert icp_grade(120).tier == "normal"
    assert icp_grade(200).tier == "mild"
    assert icp_grade(280).tier == "mild"
    assert icp_grade(280.1).tier == "severe"
    assert icp_grade(180).tier == "normal"
    assert icp_grade(180.0001).tier == "mild"


def test_icp_grade_below_band_flag():
    grade = icp_grade(60)
    assert grade.tier == "normal" and grade.below_band
    assert not icp_grade(120).below_band


def test_icp_grade_rejects_nonpositive():
    with pytest.raises(ValidationError):
        icp_grade(0.0)
    with pytest.raises(ValidationError):
        icp_grade(-5.0)


def test_icp_grade_monotone(rng):
    values = np.sort(rng.uniform(1, 500, 200))
    tiers = [grade_index(icp_grade(v).tier) for v in values]
    assert all(b >= a for a, b in zip(tiers, tiers[1:]))


# ------------------------------------------------------------------- lasso

def test_lasso_zero_penalty_matches_normal_equations(rng):
    for _ in range(5):
        X = rng.normal(size=(10, 3))
        y = rng.normal(size=10)
        model = lasso_fit(X, y, 0.0)
        want = normal_equations(X, y)
        assert model.coefficients == pytest.approx(want, abs=1e-5)
        assert model.intercept == pytest.approx(y.mean())


def test_lasso_lambda_max_kills_everything(rng):
    X = rng.normal(size=(30, 6))
    y = rng.normal(size=30)
    lam = lambda_max(X, y)
    assert not lasso_fit(X, y, lam).selected.any()
    assert not lasso_fit(X, y, lam * 1.5).selected.any()


def test_lasso_orthonormal_soft_threshold_identity(rng):
    n, p = 64, 6
    raw = rng.normal(size=(n, p))
    q, _ = np.linalg.qr(raw)
    X = q * math.sqrt(n)  # X^T X = n I
    y = rng.normal(size=n)
    yc = y - y.mean()
    ols = X.T @ yc / n
    for lam in (0.02, 0.1, 0.4):
        model = lasso_fit(X, y, lam)
        want = soft_threshold(ols, lam)
        assert model.coefficients == pytest.approx(want, abs=1e-9)


def test_lasso_path_nonzeros_nonincreasing(rng):
    X = rng.normal(size=(40, 12))
    y = X[:, 0] * 2 + X[:, 3] - X[:, 7] * 0.5 + rng.normal(scale=0.3, size=40)
    lams = np.linspace(0.0, lambda_max(X, y), 12)
    counts = [lasso_fit(X, y, lam).selected_count for lam in lams]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_lasso_select_support_recovery(rng):
    X = rng.normal(size=(60, 20))
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    beta = np.zeros(20)
    beta[[2, 9, 15]] = (2.5, -3.0, 2.0)
    y = X @ beta + rng.normal(scale=0.5, size=60)
    model = lasso_select(X, y, target_count=6)
    assert model.selected_count <= 6
    assert set(np.flatnonzero(model.selected)) >= {2, 9, 15}


def test_lasso_select_all_and_invalid(rng):
    X = rng.normal(size=(30, 5))
    y = rng.normal(size=30)
    model = lasso_select(X, y, target_count=5)
    assert model.selected_count == 5
    with pytest.raises(ValidationError):
        lasso_select(X, y, target_count=0)


def test_lasso_rejects_nonfinite():
    X = np.array([[1.0, np.nan], [2.0, 3.0]])
    with pytest.raises(ValidationError, match="non-finite"):
        lasso_fit(X, np.array([1.0, 2.0]), 0.1)


# ------------------------------------------------------------- classifiers

def blobs_3class(rng, n_per=30, spread=0.3):
    centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    X = np.vstack([c + rng.normal(scale=spread, size=(n_per, 2)) for c in centers])
    y = np.repeat([0, 1, 2], n_per)
    return X, y


def test_random_forest_separable_training_accuracy(rng):
    X, y = blobs_3class(rng)
    model = train("random_forest", X, y, params={"n_trees": 50}, seed=3)
    scores = model.predict_scores(X)
    assert (np.argmax(scores, axis=1) == y).all()
    assert scores.sum(axis=1) == pytest.approx(np.ones(len(X)), abs=1e-9)


def test_same_seed_same_forest(rng):
    X, y = blobs_3class(rng, spread=1.5)
    a = train("random_forest", X, y, params={"n_trees": 20}, seed=9)
    b = train("random_forest", X, y, params={"n_trees": 20}, seed=9)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    probe = rng.normal(size=(10, 2))
    assert (a.predict_scores(probe) == b.predict_scores(probe)).all()
    c = train("random_forest", X, y, params={"n_trees": 20}, seed=10)
    assert json.dumps(a.to_dict()) != json.dumps(c.to_dict())


def test_knn_k1_perfect_on_training(rng):
    X, y = blobs_3class(rng, spread=2.0)
    model = train("knn", X, y, params={"k": 1}, seed=0)
    assert (np.argmax(model.predict_scores(X), axis=1) == y).all()


def test_all_kinds_fit_and_normalize(rng):
    X, y = blobs_3class(rng, spread=1.0)
    for kind in ("logistic", "decision_tree", "random_forest", "knn", "naive_bayes"):
        params = {"n_trees": 10} if kind == "random_forest" else None
        model = train(kind, X, y, params=params, seed=1)
        scores = model.predict_scores(rng.normal(size=(7, 2)))
        assert scores.shape == (7, 3)
        assert scores.sum(axis=1) == pytest.approx(np.ones(7), abs=1e-9)


def test_train_rejects_single_class():
    X = np.zeros((5, 2))
    with pytest.raises(ValidationError, match="degenerate labels"):
        train("decision_tree", X, [1, 1, 1, 1, 1])


# ------------------------------------------------------- threshold baseline

def test_threshold_perfectly_separated_matches_oracle():
    values = [4.1, 4.5, 4.9, 6.2, 6.6, 8.1, 8.4]
    grades = [0, 0, 0, 1, 1, 2, 2]
    t1, t2 = train_threshold_baseline(values, grades)
    want = brute_threshold_search(values, grades)
    assert (t1, t2) == pytest.approx(want)
    assert 4.9 <= t1 < 6.2 and 6.6 <= t2 < 8.1
    # smallest grid value above the top of the normal class
    assert t1 == pytest.approx(4.9)


def test_threshold_matches_brute_force_random(rng):
    for _ in range(10):
        values = np.round(rng.uniform(3.5, 9.0, 12), 2)
        grades = rng.integers(0, 3, 12)
        if len(set(grades.tolist())) < 2 or len(set(values.tolist())) < 2:
            continue
        got = train_threshold_baseline(values, grades)
        want = brute_threshold_search(list(values), list(grades))
        assert got == pytest.approx(want)


def test_threshold_paper_scale_prediction():
    baseline = ThresholdBaseline(t1=5.96, t2=6.99)
    assert baseline.predict_grade(6.5) == 1  # mild
    assert baseline.predict_grade(5.0) == 0  # normal
    assert baseline.predict_grade(7.2) == 2  # severe


def test_threshold_degenerate_values():
    with pytest.raises(ValidationError, match="degenerate threshold search"):
        train_threshold_baseline([5.0, 5.0, 5.0], [0, 1, 2])


def test_threshold_single_class_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        t1, t2 = train_threshold_baseline([4.0, 5.0, 6.0], [0, 0, 0])
    assert any("single-class" in str(w.message) for w in caught)
    assert t1 < t2


def test_threshold_invariant_under_monotone_transform(rng):
    values = np.round(rng.uniform(4, 8, 15), 2)
    grades = rng.integers(0, 3, 15)
    if len(set(grades.tolist())) < 2:
        grades[0], grades[1] = 0, 2
    t1, t2 = train_threshold_baseline(values, grades)
    base_pred = [0 if v <= t1 else (1 if v <= t2 else 2) for v in values]
    scaled = np.round(values * 2.0 + 1.0, 2)
    s1, s2 = train_threshold_baseline(scaled, grades)
    scaled_pred = [0 if v <= s1 else (1 if v <= s2 else 2) for v in scaled]
    assert base_pred == scaled_pred


# ----------------------------------------------------------------- metrics

def test_metrics_perfect():
    cm = np.diag([5, 3, 2])
    assert classification_metrics(cm) == (1.0, 1.0, 1.0, 1.0)


def test_metrics_weighted_recall_equals_accuracy():
    cm = np.array([[5, 1, 0], [0, 3, 1], [0, 0, 2]])
    accuracy, _, recall, _ = classification_metrics(cm)
    assert recall == pytest.approx(accuracy)


def test_metrics_zero_predicted_class_precision():
    cm = np.array([[3, 0], [2, 0]])  # nobody predicted class 1
    accuracy, precision, recall, f1 = classification_metrics(cm)
    assert accuracy == pytest.approx(0.6)
    assert recall == pytest.approx(accuracy)
    # class 1 contributes precision 0 with weight 0.4
    assert precision == pytest.approx(0.6 * (3 / 5))


def test_metrics_identity_random(rng):
    for _ in range(50):
        cm = rng.integers(0, 20, (3, 3))
        if cm.sum() == 0:
            continue
        accuracy, _, recall, _ = classification_metrics(cm)
        assert recall == pytest.approx(accuracy, abs=1e-12)


# --------------------------------------------------------------------- CV

def make_cohort(rng, n=90):
    """Synthetic 50-feature cohort whose ICP depends on ONSD + 2 features."""
    names = feature_names()
    onsd = rng.uniform(4.0, 8.0, n)
    cf = rng.normal(size=(n, len(names)))
    icp = 70 + 28 * (onsd - 4.0) + 30 * cf[:, 3] + 25 * cf[:, 7] \
        + 35 * cf[:, 3] * cf[:, 7] + rng.normal(scale=8.0, size=n)
    icp = np.clip(icp, 30, 480)
    values = np.column_stack([cf, onsd])
    matrix = FeatureMatrix(values, names + ["mean_onsd_mm"], len(names),
                           [f"p{i:03d}" for i in range(n)])
    return matrix, icp


def test_stratified_folds_balanced(rng):
    grades = rng.integers(0, 3, 53)
    folds = stratified_folds(grades, 5, seed=1)
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(np.concatenate(folds).tolist()) == list(range(53))
    for cls in (0, 1, 2):
        per_fold = [int((grades[f] == cls).sum()) for f in folds]
        assert max(per_fold) - min(per_fold) <= 1


def test_cross_validate_deterministic(rng):
    matrix, icp = make_cohort(rng, n=60)
    a = cross_validate("decision_tree", matrix, icp, folds=5, seed=4)
    b = cross_validate("decision_tree", matrix, icp, folds=5, seed=4)
    for fa, fb in zip(a.folds, b.folds):
        assert (fa.confusion == fb.confusion).all()
        assert fa.accuracy == fb.accuracy
    assert a.summary() == b.summary()


def test_cross_validate_threshold_reports_cutoffs(rng):
    matrix, icp = make_cohort(rng, n=60)
    report = cross_validate("threshold_baseline", matrix, icp, folds=5, seed=4)
    assert all(f.thresholds is not None for f in report.folds)
    for f in report.folds:
        assert f.thresholds[0] < f.thresholds[1]


def test_cross_validate_groups_stay_together(rng):
    matrix, icp = make_cohort(rng, n=60)
    groups = [f"g{i // 2}" for i in range(60)]  # two rows per patient
    report = cross_validate("naive_bayes", matrix, icp, folds=5, seed=0, groups=groups)
    assert len(report.folds) == 5
    assert sum(int(f.confusion.sum()) for f in report.folds) == 60


# ------------------------------------------------------ model fit + predict

def record_for(names, values, icp=150.0, pid="p0"):
    return ClinicalRecord(pid, dict(zip(names, values)), icp)


def test_fit_predict_round_trip(tmp_path, rng):
    matrix, icp = make_cohort(rng, n=80)
    model = fit_model(matrix, icp, "random_forest", params={"n_trees": 30}, seed=5)
    names = feature_names()
    raw = matrix.values[0]
    clinical = record_for(names, raw[:-1], pid="p000")
    grade, scores = predict(model, clinical, raw[-1])
    assert grade.tier in ("normal", "mild", "severe")
    assert sum(scores.values()) == pytest.approx(1.0, abs=1e-9)

    model.to_json(tmp_path / "model.json")
    loaded = GradingModel.from_json(tmp_path / "model.json")
    grade2, scores2 = predict(loaded, clinical, raw[-1])
    assert grade2 == grade and scores2 == scores


def test_predict_schema_mismatch(rng):
    matrix, icp = make_cohort(rng, n=60)
    model = fit_model(matrix, icp, "naive_bayes", seed=1)
    bad = ClinicalRecord("px", {"not_a_feature": 1.0}, 150.0)
    with pytest.raises(ValidationError, match="schema mismatch with model"):
        predict(model, bad, 5.5)


def test_threshold_model_round_trip(tmp_path, rng):
    matrix, icp = make_cohort(rng, n=60)
    model = fit_model(matrix, icp, "threshold_baseline", seed=1)
    model.to_json(tmp_path / "thr.json")
    loaded = GradingModel.from_json(tmp_path / "thr.json")
    names = feature_names()
    clinical = record_for(names, matrix.values[3][:-1])
    assert predict(loaded, clinical, 6.5) == predict(model, clinical, 6.5)


def test_build_feature_matrix_skips_missing_onsd(rng):
    names = feature_names()
    records = [record_for(names, rng.normal(size=49), pid=f"p{i}") for i in range(4)]
    onsd = {"p0": 5.0, "p2": 6.0, "p3": 7.0}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        matrix, icp = build_feature_matrix(records, onsd)
    assert matrix.values.shape == (3, 50)
    assert matrix.patient_ids == ["p0", "p2", "p3"]
    assert any("p1" in str(w.message) for w in caught)
