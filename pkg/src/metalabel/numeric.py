"""Dense numeric kernels.

Closed-form one-hot ridge regression, numerically stable softmax
cross-entropy, L2-regularized multinomial logistic regression solved by
full-batch gradient descent with backtracking line search, and a central
finite-difference gradient checker.

Both regression objectives average the data term over samples, so the
regularization constants are dataset-size independent:

    ridge:  mean_i ||W x_i - onehot(y_i)||^2 + lam * ||W||_F^2
    logreg: mean_i ce(W x_i, y_i)            + lam * ||W||_F^2
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .validation import as_float_matrix, as_label_vector, require


@dataclass(frozen=True)
class RidgeConfig:
    """Settings for the closed-form ridge solver.

    `lam` must be strictly positive so the normal equations stay
    symmetric positive definite. `add_bias` appends a constant-1 feature
    (the bias column is regularized like any other weight).
    """

    lam: float = 1e-3
    add_bias: bool = False

    def __post_init__(self):
        require(self.lam > 0, "ridge lam must be strictly positive")


@dataclass(frozen=True)
class LogRegConfig:
    """Settings for the iterative logistic-regression solver."""

    lam: float = 1.0
    max_iter: int = 10_000
    tol: float = 1e-6
    add_bias: bool = False

    def __post_init__(self):
        require(self.lam > 0, "logreg lam must be strictly positive")
        require(self.max_iter >= 1, "max_iter must be at least 1")
        require(self.tol > 0, "tol must be strictly positive")


@dataclass
class LinearClassifier:
    """A linear map from features to class scores.

    `weights` has one row per class. `bias` is optional; when present,
    scores are `X @ weights.T + bias`.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None
    converged: bool = True
    n_iter: int = 0
    objective_history: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        require(self.weights.ndim == 2, "weights must be 2-d")
        require(bool(np.isfinite(self.weights).all()), "weights must be finite")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=float)
            require(self.bias.shape == (self.weights.shape[0],), "bias shape mismatch")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def decision_function(self, X) -> np.ndarray:
        X = as_float_matrix(X, "X")
        require(X.shape[1] == self.weights.shape[1],
                f"X has {X.shape[1]} features, classifier expects {self.weights.shape[1]}")
        scores = X @ self.weights.T
        if self.bias is not None:
            scores = scores + self.bias
        return scores

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)


@dataclass
class GlobalClassifier:
    """A classifier over the full class universe, rows keyed by class id.

    `class_ids` must be strictly increasing so that row sub-selection by
    sorted unique label values is well defined.
    """

    weights: np.ndarray
    class_ids: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.class_ids = np.asarray(self.class_ids, dtype=int)
        require(self.weights.ndim == 2, "weights must be 2-d")
        require(self.class_ids.ndim == 1, "class_ids must be 1-d")
        require(self.class_ids.shape[0] == self.weights.shape[0],
                "class_ids length must match the number of weight rows")
        require(bool((np.diff(self.class_ids) > 0).all()) if self.class_ids.size > 1 else True,
                "class_ids must be strictly increasing")
        require(bool(np.isfinite(self.weights).all()), "weights must be finite")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def row_of(self, label: int) -> int:
        """Row index of a global label; raises on unknown labels."""
        pos = int(np.searchsorted(self.class_ids, label))
        require(pos < self.class_ids.size and self.class_ids[pos] == label,
                f"unknown class label {label}")
        return pos

    def rows_of(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=int).ravel()
        pos = np.searchsorted(self.class_ids, labels)
        require(bool((pos < self.class_ids.size).all())
                and bool((self.class_ids[np.minimum(pos, self.class_ids.size - 1)] == labels).all()),
                "unknown class label in input")
        return pos


def one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=int).ravel()
    require(bool((y >= 0).all()) and bool((y < n_classes).all()),
            f"labels must lie in [0, {n_classes})")
    out = np.zeros((y.shape[0], n_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def log_softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max-subtraction for stability."""
    scores = np.asarray(scores, dtype=float)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

def softmax(scores: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(scores))


def softmax_ce(logits, label: int) -> float:
    """Cross-entropy -log softmax(logits)[label] of a single score vector."""
    logits = np.asarray(logits, dtype=float).ravel()
    require(logits.size >= 2, "need at least 2 logits")
    require(bool(np.isfinite(logits).all()), "logits must be finite")
    require(0 <= label < logits.size, f"label {label} out of range for {logits.size} logits")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def mean_cross_entropy(scores: np.ndarray, y) -> float:
    """Mean cross-entropy of row-wise scores against integer labels."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=int).ravel()
    require(scores.ndim == 2 and scores.shape[0] == y.shape[0], "scores/labels shape mismatch")
    ls = log_softmax(scores)
    return float(-ls[np.arange(y.shape[0]), y].mean())


def _append_ones(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _split_bias(W: np.ndarray, add_bias: bool):
    if add_bias:
        return W[:, :-1].copy(), W[:, -1].copy()
    return W, None


def ridge_fit(X, y, n_classes: int, cfg: RidgeConfig | None = None) -> LinearClassifier:
    """Minimize mean squared error to one-hot targets plus lam*||W||^2.

    Solved exactly through the normal equations
    (X^T X + n*lam*I) W^T = X^T Y, factored as an SPD system.
    """
    cfg = cfg or RidgeConfig()
    X = as_float_matrix(X, "X")
    y = as_label_vector(y, X.shape[0], "y")
    require(bool((y < n_classes).all()), f"labels must be < n_classes={n_classes}")
    F = _append_ones(X) if cfg.add_bias else X
    n, p = F.shape
    Y = one_hot(y, n_classes)
    A = F.T @ F + n * cfg.lam * np.eye(p)
    V = cho_solve(cho_factor(A), F.T @ Y)
    W, b = _split_bias(V.T, cfg.add_bias)
    return LinearClassifier(weights=W, bias=b)


def _logreg_objective(W: np.ndarray, F: np.ndarray, y: np.ndarray, lam: float) -> float:
    return mean_cross_entropy(F @ W.T, y) + lam * float((W * W).sum())


def _logreg_gradient(W: np.ndarray, F: np.ndarray, Y: np.ndarray, y: np.ndarray, lam: float):
    scores = F @ W.T
    ls = log_softmax(scores)
    obj = float(-ls[np.arange(y.shape[0]), y].mean()) + lam * float((W * W).sum())
    P = np.exp(ls)
    G = (P - Y).T @ F / F.shape[0] + 2.0 * lam * W
    return obj, G


def logreg_fit(X, y, n_classes: int, cfg: LogRegConfig | None = None) -> LinearClassifier:
    """Minimize mean multinomial cross-entropy plus lam*||W||^2.

    Full-batch gradient descent with Armijo backtracking; the objective is
    non-increasing across iterations. Stops when the gradient Frobenius
    norm drops below `tol` or after `max_iter` steps (in which case the
    returned classifier is flagged as non-converged).
    """
    cfg = cfg or LogRegConfig()
    X = as_float_matrix(X, "X")
    y = as_label_vector(y, X.shape[0], "y")
    require(bool((y < n_classes).all()), f"labels must be < n_classes={n_classes}")
    F = _append_ones(X) if cfg.add_bias else X
    Y = one_hot(y, n_classes)

    W = np.zeros((n_classes, F.shape[1]))
    obj, G = _logreg_gradient(W, F, Y, y, cfg.lam)
    history = [obj]
    step = 1.0
    converged = False
    n_iter = 0
    for n_iter in range(1, cfg.max_iter + 1):
        gnorm2 = float((G * G).sum())
        if np.sqrt(gnorm2) < cfg.tol:
            converged = True
            n_iter -= 1
            break
        step = min(1.0, 2.0 * step)
        while True:
            W_new = W - step * G
            obj_new = _logreg_objective(W_new, F, y, cfg.lam)
            if obj_new <= obj - 1e-4 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-20:
                # Line search stalled at numerical precision; keep W as is.
                W_new, obj_new = W, obj
                break
        W = W_new
        obj, G = _logreg_gradient(W, F, Y, y, cfg.lam)
        history.append(obj)
    else:
        n_iter = cfg.max_iter

    if not converged and np.sqrt(float((G * G).sum())) < cfg.tol:
        converged = True
    if not converged:
        warnings.warn(
            f"logistic regression did not reach tol={cfg.tol} in {cfg.max_iter} iterations",
            RuntimeWarning,
            stacklevel=2,
        )
    Wout, b = _split_bias(W, cfg.add_bias)
    return LinearClassifier(weights=Wout, bias=b, converged=converged, n_iter=n_iter,
                            objective_history=np.asarray(history))


def grad_check(f, grad, x0, eps: float = 1e-4) -> float:
    """Compare an analytic gradient against central finite differences.

    Returns the maximum over coordinates of
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    x0 = np.asarray(x0, dtype=float)
    analytic = np.asarray(grad(x0), dtype=float).ravel()
    require(analytic.size == x0.size, "gradient size must match the point size")
    numeric = np.zeros(x0.size)
    flat = x0.ravel().copy()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(flat.reshape(x0.shape)))
        flat[i] = orig - eps
        f_minus = float(f(flat.reshape(x0.shape)))
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * eps)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    if flat.size == 0:
        return 0.0
    return float((np.abs(analytic - numeric) / scale).max())
