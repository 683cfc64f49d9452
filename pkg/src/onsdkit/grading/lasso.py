"""L1-penalized linear regression by cyclic coordinate descent.

Used for feature screening: the count-targeted selector bisects the
penalty until the fitted support size hits the requested feature count.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

MAX_SWEEPS = 10_000
COEF_TOL = 1e-7


@dataclass(frozen=True)
class LassoModel:
    """Fitted coefficients; zeros outside the selected support are exact."""

    lam: float
    coefficients: np.ndarray
    intercept: float
    converged: bool

    @property
    def selected(self):
        return self.coefficients != 0.0

    @property
    def selected_count(self):
        return int(np.count_nonzero(self.coefficients))


def soft_threshold(value, threshold):
    return np.sign(value) * np.maximum(np.abs(value) - threshold, 0.0)


def lambda_max(X, y):
    """Smallest penalty that zeroes every coefficient.

    Uses the same per-column dot product as the descent loop so the kill
    condition holds exactly in floating point.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    centered = y - float(y.mean())
    n = len(y)
    return max(abs(float(X[:, j] @ centered)) for j in range(X.shape[1])) / n


def lasso_fit(X, y, lam, beta0=None):
    """Minimize (1/2n)||y - Xb||^2 + lam*||b||_1 by coordinate descent.

    The target is centered internally and its mean stored as the
    intercept; columns are expected standardized by the caller but any
    scaling is handled via per-column curvatures. Soft-thresholding makes
    discarded coefficients exactly zero.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValidationError("X must be (n, p) with matching y")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValidationError("non-finite values")
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    n, p = X.shape
    intercept = float(y.mean())
    curvature = (X * X).sum(axis=0) / n
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    residual = (y - intercept) - X @ beta
    converged = False
    for _ in range(MAX_SWEEPS):
        max_delta = 0.0
        for j in range(p):
            if curvature[j] == 0.0:
                continue
            rho = float(X[:, j] @ residual) / n + curvature[j] * beta[j]
            updated = soft_threshold(rho, lam) / curvature[j]
            if updated != beta[j]:
                residual += X[:, j] * (beta[j] - updated)
                max_delta = max(max_delta, abs(updated - beta[j]))
                beta[j] = updated
        if max_delta < COEF_TOL:
            converged = True
            break
    if not converged:
        warnings.warn("lasso coordinate descent did not converge", stacklevel=2)
    return LassoModel(float(lam), beta, intercept, converged)


def lasso_select(X, y, target_count=14, bisection_steps=40):
    """Penalty bisection over (0, lambda_max] targeting a support size.

    Finds the largest lambda whose fit keeps at least ``target_count``
    features and returns that model; when no lambda achieves the exact
    count, the evaluated model with the nearest count wins (larger lambda
    on ties). Callers read the achieved count off the model.
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    if not (1 <= target_count <= p):
        raise ValidationError(f"target_count must be in [1, {p}]")
    hi = lambda_max(X, y)
    if hi == 0.0:
        raise ValidationError("degenerate design: all-zero gradient")
    lo = 0.0
    lo_model = None
    evaluated = []
    beta_warm = None
    for _ in range(bisection_steps):
        mid = 0.5 * (lo + hi)
        model = lasso_fit(X, y, mid, beta0=beta_warm)
        evaluated.append(model)
        beta_warm = model.coefficients
        if model.selected_count >= target_count:
            lo, lo_model = mid, model
        else:
            hi = mid
    if lo_model is not None and lo_model.selected_count == target_count:
        return lo_model
    evaluated.sort(key=lambda m: (abs(m.selected_count - target_count), -m.lam))
    return evaluated[0]
