"""Input-validation helpers shared by the estimator and function surfaces."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def require(condition: bool, message: str) -> None:
    """Raise ValidationError with `message` unless `condition` holds."""
    if not condition:
        raise ValidationError(message)


def as_float_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-d float array."""
    X = np.asarray(X, dtype=float)
    require(X.ndim == 2, f"{name} must be a 2-d array, got ndim={X.ndim}")
    require(X.size > 0, f"{name} must be non-empty")
    require(bool(np.isfinite(X).all()), f"{name} contains non-finite entries")
    return X


def as_float_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 1-d float array."""
    x = np.asarray(x, dtype=float)
    require(x.ndim == 1, f"{name} must be a 1-d array, got ndim={x.ndim}")
    require(bool(np.isfinite(x).all()), f"{name} contains non-finite entries")
    return x


def as_label_vector(y, n_rows: int, name: str = "y") -> np.ndarray:
    """Coerce to a 1-d array of non-negative integer labels of length `n_rows`."""
    y = np.asarray(y)
    require(y.ndim == 1, f"{name} must be a 1-d array, got ndim={y.ndim}")
    require(y.shape[0] == n_rows, f"{name} has {y.shape[0]} entries, expected {n_rows}")
    yi = y.astype(int, copy=True)
    require(bool(np.array_equal(yi, y)), f"{name} must contain integers")
    require(bool((yi >= 0).all()), f"{name} must be non-negative")
    return yi
