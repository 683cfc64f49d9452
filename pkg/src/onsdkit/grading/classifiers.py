"""Self-contained classifiers for the ICP grading comparison.

Every classifier exposes ``fit(X, y)`` and ``predict_scores(X)`` where the
scores rows are normalized over the training classes. All randomness is
seeded; the same seed and data give identical models.
"""

import math
import warnings

import numpy as np

from ..errors import ValidationError

GRID_STEP_MM = 0.01


def _class_index(y, classes):
    lookup = {c: i for i, c in enumerate(classes)}
    return np.array([lookup[v] for v in y], dtype=int)


class LogisticClassifier:
    """Multinomial logistic regression, full-batch gradient descent, L2 1e-4."""

    def __init__(self, l2=1e-4, learning_rate=0.5, max_iter=2000, tol=1e-7):
        self.l2 = l2
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.tol = tol
        self.classes = None
        self.weights = None
        self.bias = None

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=float)
        self.classes = sorted(set(y))
        idx = _class_index(y, self.classes)
        n, d = X.shape
        k = len(self.classes)
        onehot = np.zeros((n, k))
        onehot[np.arange(n), idx] = 1.0
        self.weights = np.zeros((d, k))
        self.bias = np.zeros(k)
        for _ in range(self.max_iter):
            probs = self._softmax(X @ self.weights + self.bias)
            grad_w = X.T @ (probs - onehot) / n + self.l2 * self.weights
            grad_b = (probs - onehot).mean(axis=0)
            self.weights -= self.learning_rate * grad_w
            self.bias -= self.learning_rate * grad_b
            if max(np.abs(grad_w).max(), np.abs(grad_b).max()) < self.tol:
                break
        return self

    @staticmethod
    def _softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)

    def predict_scores(self, X):
        return self._softmax(np.asarray(X, dtype=float) @ self.weights + self.bias)

    def to_dict(self):
        return {
            "classes": list(self.classes),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        model = cls()
        model.classes = list(data["classes"])
        model.weights = np.asarray(data["weights"], dtype=float)
        model.bias = np.asarray(data["bias"], dtype=float)
        return model


def _gini(counts):
    total = counts.sum()
    if total == 0:
        return 0.0
    frac = counts / total
    return 1.0 - float((frac * frac).sum())


def _best_split(column, idx, n_classes):
    """Best threshold of one feature by weighted Gini; None if unsplittable."""
    order = np.argsort(column, kind="stable")
    xs = column[order]
    ys = idx[order]
    boundaries = np.flatnonzero(xs[1:] > xs[:-1])
    if boundaries.size == 0:
        return None
    onehot = np.zeros((len(ys), n_classes))
    onehot[np.arange(len(ys)), ys] = 1.0
    prefix = onehot.cumsum(axis=0)
    total = prefix[-1]
    n = len(ys)
    left = prefix[boundaries]
    n_left = (boundaries + 1).astype(float)
    right = total - left
    n_right = n - n_left
    gini_left = 1.0 - ((left / n_left[:, None]) ** 2).sum(axis=1)
    gini_right = 1.0 - ((right / n_right[:, None]) ** 2).sum(axis=1)
    cost = (n_left * gini_left + n_right * gini_right) / n
    best = int(np.argmin(cost))
    threshold = 0.5 * (xs[boundaries[best]] + xs[boundaries[best] + 1])
    return float(cost[best]), threshold


class DecisionTree:
    """Single CART tree: Gini impurity, midpoint thresholds, pure leaves.

    ``max_features`` enables per-split feature subsampling for forests;
    without it the split search scans features in index order, so the
    tree is deterministic with no randomness at all.
    """

    def __init__(self, max_features=None, min_leaf=1, max_depth=None):
        self.max_features = max_features
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.classes = None
        self.root = None

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=float)
        self.classes = sorted(set(y))
        idx = _class_index(y, self.classes)
        self.root = self._grow(X, idx, depth=0, rng=rng)
        return self

    def _leaf(self, idx):
        counts = np.bincount(idx, minlength=len(self.classes)).astype(float)
        return {"probs": (counts / counts.sum()).tolist()}

    def _grow(self, X, idx, depth, rng):
        n, d = X.shape
        if (
            n <= self.min_leaf
            or (self.max_depth is not None and depth >= self.max_depth)
            or np.all(idx == idx[0])
        ):
            return self._leaf(idx)
        if self.max_features is not None and self.max_features < d:
            features = np.sort(rng.choice(d, size=self.max_features, replace=False))
        else:
            features = np.arange(d)
        best = None
        for j in features:
            found = _best_split(X[:, j], idx, len(self.classes))
            if found is None:
                continue
            cost, threshold = found
            if best is None or cost < best[0]:
                best = (cost, int(j), threshold)
        if best is None:
            return self._leaf(idx)
        _, feature, threshold = best
        go_left = X[:, feature] <= threshold
        return {
            "feature": feature,
            "threshold": threshold,
            "left": self._grow(X[go_left], idx[go_left], depth + 1, rng),
            "right": self._grow(X[~go_left], idx[~go_left], depth + 1, rng),
        }

    def predict_scores(self, X):
        X = np.asarray(X, dtype=float)
        out = np.zeros((len(X), len(self.classes)))
        for i, row in enumerate(X):
            node = self.root
            while "probs" not in node:
                node = node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
            out[i] = node["probs"]
        return out

    def to_dict(self):
        return {"classes": list(self.classes), "tree": self.root}

    @classmethod
    def from_dict(cls, data):
        model = cls()
        model.classes = list(data["classes"])
        model.root = data["tree"]
        return model


class RandomForest:
    """Bagged CART ensemble: 200 trees, sqrt(d) features per split.

    Tree t draws its bootstrap and split randomness from ``[seed, t]``, so
    serial and parallel construction would agree tree for tree.
    """

    def __init__(self, n_trees=200, min_leaf=1, max_depth=None, seed=0):
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.seed = seed
        self.classes = None
        self.trees = []

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=float)
        y = list(y)
        self.classes = sorted(set(y))
        n, d = X.shape
        max_features = max(1, round(math.sqrt(d)))
        self.trees = []
        for t in range(self.n_trees):
            tree_rng = np.random.default_rng([self.seed, t])
            sample = tree_rng.integers(0, n, size=n)
            tree = DecisionTree(
                max_features=max_features,
                min_leaf=self.min_leaf,
                max_depth=self.max_depth,
            )
            tree.classes = self.classes
            idx = _class_index([y[i] for i in sample], self.classes)
            tree.root = tree._grow(X[sample], idx, depth=0, rng=tree_rng)
            self.trees.append(tree)
        return self

    def predict_scores(self, X):
        stacked = np.zeros((len(X), len(self.classes)))
        for tree in self.trees:
            stacked += tree.predict_scores(X)
        return stacked / len(self.trees)

    def to_dict(self):
        return {
            "classes": list(self.classes),
            "seed": self.seed,
            "n_trees": self.n_trees,
            "trees": [tree.root for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, data):
        model = cls(n_trees=data["n_trees"], seed=data["seed"])
        model.classes = list(data["classes"])
        model.trees = []
        for root in data["trees"]:
            tree = DecisionTree()
            tree.classes = model.classes
            tree.root = root
            model.trees.append(tree)
        return model


class KnnClassifier:
    """k-nearest neighbours on standardized Euclidean distance, k = 5."""

    def __init__(self, k=5):
        self.k = k
        self.classes = None
        self.train_x = None
        self.train_idx = None
        self.means = None
        self.stds = None

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=float)
        self.classes = sorted(set(y))
        self.means = X.mean(axis=0)
        self.stds = np.maximum(X.std(axis=0), 1e-12)
        self.train_x = (X - self.means) / self.stds
        self.train_idx = _class_index(y, self.classes)
        return self

    def predict_scores(self, X):
        X = (np.asarray(X, dtype=float) - self.means) / self.stds
        k = min(self.k, len(self.train_x))
        out = np.zeros((len(X), len(self.classes)))
        for i, row in enumerate(X):
            dists = np.sqrt(((self.train_x - row) ** 2).sum(axis=1))
            order = np.lexsort((np.arange(len(dists)), dists))[:k]
            votes = np.bincount(self.train_idx[order], minlength=len(self.classes))
            out[i] = votes / k
        return out

    def to_dict(self):
        return {
            "classes": list(self.classes),
            "k": self.k,
            "train_x": self.train_x.tolist(),
            "train_idx": self.train_idx.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        model = cls(k=data["k"])
        model.classes = list(data["classes"])
        model.train_x = np.asarray(data["train_x"], dtype=float)
        model.train_idx = np.asarray(data["train_idx"], dtype=int)
        model.means = np.asarray(data["means"], dtype=float)
        model.stds = np.asarray(data["stds"], dtype=float)
        return model


class GaussianNaiveBayes:
    """Per-class Gaussian likelihoods with a 1e-9 variance floor."""

    VAR_FLOOR = 1e-9

    def __init__(self):
        self.classes = None
        self.priors = None
        self.means = None
        self.variances = None

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=float)
        self.classes = sorted(set(y))
        idx = _class_index(y, self.classes)
        k = len(self.classes)
        self.priors = np.zeros(k)
        self.means = np.zeros((k, X.shape[1]))
        self.variances = np.zeros((k, X.shape[1]))
        for c in range(k):
            rows = X[idx == c]
            self.priors[c] = len(rows) / len(X)
            self.means[c] = rows.mean(axis=0)
            self.variances[c] = np.maximum(rows.var(axis=0), self.VAR_FLOOR)
        return self

    def predict_scores(self, X):
        X = np.asarray(X, dtype=float)
        log_post = np.zeros((len(X), len(self.classes)))
        for c in range(len(self.classes)):
            diff = X - self.means[c]
            log_like = -0.5 * (
                np.log(2.0 * math.pi * self.variances[c]) + diff * diff / self.variances[c]
            ).sum(axis=1)
            log_post[:, c] = math.log(self.priors[c]) + log_like
        shifted = log_post - log_post.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        return probs / probs.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {
            "classes": list(self.classes),
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        model = cls()
        model.classes = list(data["classes"])
        model.priors = np.asarray(data["priors"], dtype=float)
        model.means = np.asarray(data["means"], dtype=float)
        model.variances = np.asarray(data["variances"], dtype=float)
        return model


def train_threshold_baseline(mean_onsd, grades):
    """Grid-search the two ONSD cutoffs that maximize training accuracy.

    The grid steps 0.01 mm over [min-0.01, max+0.01]; candidate pairs
    require t1 < t2 and classify onsd <= t1 as grade 0, (t1, t2] as 1,
    above t2 as 2. Ties resolve to the lexicographically smallest pair.
    """
    values = np.asarray(mean_onsd, dtype=float)
    grades = np.asarray(grades, dtype=int)
    if values.size < 3 or values.size != grades.size:
        raise ValidationError("need >= 3 paired training samples")
    if np.unique(values).size < 2:
        raise ValidationError("degenerate threshold search")
    if np.unique(grades).size < 2:
        warnings.warn("threshold search on single-class labels", stacklevel=2)
    lo_cents = round((values.min() - GRID_STEP_MM) * 100)
    hi_cents = round((values.max() + GRID_STEP_MM) * 100)
    grid = np.arange(lo_cents, hi_cents + 1) / 100.0
    # per-grade cumulative counts <= t for every grid point
    cumulative = np.zeros((3, grid.size))
    for g in range(3):
        ordered = np.sort(values[grades == g])
        cumulative[g] = np.searchsorted(ordered, grid, side="right")
    n2 = int((grades == 2).sum())
    correct = (
        cumulative[0][:, None]
        - cumulative[1][:, None]
        + cumulative[1][None, :]
        - cumulative[2][None, :]
        + n2
    )
    correct[np.tril_indices(grid.size)] = -1  # enforce t1 < t2
    flat = int(np.argmax(correct))  # row-major scan = smallest (t1, t2) tie-break
    i, j = divmod(flat, grid.size)
    return float(grid[i]), float(grid[j])


class ThresholdBaseline:
    """Two-cutoff grading straight from the mean ONSD."""

    def __init__(self, t1=None, t2=None):
        self.t1 = t1
        self.t2 = t2
        self.classes = [0, 1, 2]

    def fit(self, onsd_values, y, rng=None):
        self.t1, self.t2 = train_threshold_baseline(onsd_values, y)
        return self

    def predict_grade(self, onsd):
        if onsd <= self.t1:
            return 0
        if onsd <= self.t2:
            return 1
        return 2

    def predict_scores(self, onsd_values):
        onsd_values = np.atleast_1d(np.asarray(onsd_values, dtype=float))
        out = np.zeros((len(onsd_values), 3))
        for i, value in enumerate(onsd_values):
            out[i, self.predict_grade(float(value))] = 1.0
        return out

    def to_dict(self):
        return {"classes": self.classes, "t1": self.t1, "t2": self.t2}

    @classmethod
    def from_dict(cls, data):
        model = cls(t1=data["t1"], t2=data["t2"])
        model.classes = list(data["classes"])
        return model


CLASSIFIERS = {
    "logistic": LogisticClassifier,
    "decision_tree": DecisionTree,
    "random_forest": RandomForest,
    "knn": KnnClassifier,
    "naive_bayes": GaussianNaiveBayes,
    "threshold_baseline": ThresholdBaseline,
}


def train(kind, X, grades, params=None, seed=0):
    """Fit one classifier kind on already-prepared features.

    ``X`` is the selected/standardized matrix for the model kinds and the
    raw mean-ONSD vector for the threshold baseline. Deterministic for a
    fixed seed.
    """
    if kind not in CLASSIFIERS:
        raise ValidationError(f"unknown classifier kind: {kind!r}")
    grades = list(int(g) for g in grades)
    if len(set(grades)) < 2:
        raise ValidationError("degenerate labels")
    params = dict(params or {})
    if kind == "random_forest":
        params.setdefault("seed", seed)
    model = CLASSIFIERS[kind](**params)
    if kind != "threshold_baseline":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValidationError("need at least one feature")
    rng = np.random.default_rng(seed)
    return model.fit(X, grades, rng=rng)
