"""Stratified cross-validation and classification metrics."""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..errors import ValidationError


def classification_metrics(confusion):
    """Accuracy plus support-weighted precision/recall/F1 from a confusion matrix.

    Rows are true classes, columns predicted. Classes nobody predicted
    contribute precision 0. Weighted averages are computed in exact
    rational arithmetic before the final float conversion, so weighted
    recall equals accuracy bit-for-bit, not just approximately.
    """
    cm = np.asarray(confusion, dtype=float)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValidationError("confusion matrix must be square")
    total = Fraction(float(cm.sum()))
    if total <= 0:
        raise ValidationError("empty confusion matrix")
    accuracy = Fraction(0)
    precision = Fraction(0)
    recall = Fraction(0)
    f1 = Fraction(0)
    for c in range(cm.shape[0]):
        tp = Fraction(float(cm[c, c]))
        support = Fraction(float(cm[c, :].sum()))
        predicted = Fraction(float(cm[:, c].sum()))
        weight = support / total
        accuracy += tp / total
        if predicted > 0:
            precision += weight * (tp / predicted)
        if support > 0:
            recall += weight * (tp / support)
        f1_den = support + predicted
        if f1_den > 0:
            f1 += weight * (2 * tp / f1_den)
    return float(accuracy), float(precision), float(recall), float(f1)


def confusion_matrix(true_idx, pred_idx, n_classes=3):
    """Counts matrix with true classes on rows, predictions on columns.

    Also the entry point for scoring externally produced predictions
    (e.g. a predictions CSV from some other classifier) with the same
    metrics as the in-house models.
    """
    cm = np.zeros((n_classes, n_classes), dtype=int)
    for t, p in zip(true_idx, pred_idx):
        cm[int(t), int(p)] += 1
    return cm


def stratified_folds(grades, folds, seed):
    """Partition sample indices into stratified folds.

    Within each class, indices are shuffled then dealt to the currently
    smallest folds, so per-fold class counts stay within 1 of proportional
    and fold sizes differ by at most 1.
    """
    grades = np.asarray(grades, dtype=int)
    n = grades.size
    if folds < 2:
        raise ValidationError("folds must be >= 2")
    if n < folds:
        raise ValidationError("need at least one sample per fold")
    rng = np.random.default_rng(seed)
    assignment = np.full(n, -1, dtype=int)
    fold_sizes = np.zeros(folds, dtype=int)
    for cls in sorted(set(grades.tolist())):
        members = np.flatnonzero(grades == cls)
        members = members[rng.permutation(members.size)]
        base, extra = divmod(members.size, folds)
        order = np.lexsort((np.arange(folds), fold_sizes))
        counts = np.full(folds, base, dtype=int)
        counts[order[:extra]] += 1
        cursor = 0
        for f in range(folds):
            take = counts[f]
            assignment[members[cursor : cursor + take]] = f
            fold_sizes[f] += take
            cursor += take
    return [np.flatnonzero(assignment == f) for f in range(folds)]


@dataclass(frozen=True)
class FoldResult:
    fold: int
    confusion: np.ndarray
    accuracy: float
    precision: float
    recall: float
    f1: float
    selected_count: int | None = None
    thresholds: tuple | None = None


@dataclass
class CvReport:
    """Per-fold metrics plus mean and population std across folds."""

    kind: str
    folds: list = field(default_factory=list)

    def summary(self):
        out = {}
        for name in ("accuracy", "precision", "recall", "f1"):
            values = np.array([getattr(f, name) for f in self.folds])
            out[name] = (float(values.mean()), float(values.std()))
        return out
