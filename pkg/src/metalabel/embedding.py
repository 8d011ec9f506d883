"""Embedding models and their two training modes.

Architectures are identity, linear, and a one-hidden-layer tanh network.
Episodic training differentiates the query cross-entropy through the
closed-form ridge solution fit on each embedded support set. Flat
pre-training jointly minimizes multi-class cross-entropy of a global
linear classifier over a merged dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import NumericalError, ValidationError
from .numeric import GlobalClassifier, RidgeConfig, log_softmax, one_hot
from .tasks import MetaTrainingSet, Task
from .validation import as_float_matrix, as_float_vector, as_label_vector, require

ARCHITECTURES = ("identity", "linear", "mlp1")
MODEL_FORMAT_VERSION = 1


@dataclass
class EmbeddingModel:
    """A deterministic map from input space to an m-dimensional embedding."""

    arch: str
    d: int
    m: int
    hidden: int | None = None
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        require(self.arch in ARCHITECTURES, f"unknown architecture {self.arch!r}")
        self.params = np.asarray(self.params, dtype=float).ravel()
        require(self.params.size == param_count(self.arch, self.d, self.m, self.hidden),
                f"{self.arch} model expects "
                f"{param_count(self.arch, self.d, self.m, self.hidden)} parameters, "
                f"got {self.params.size}")
        if self.arch == "identity":
            require(self.d == self.m, "identity model requires d == m")
        if self.arch == "mlp1":
            require(self.hidden is not None and self.hidden >= 1,
                    "mlp1 model requires a positive hidden width")

    def embed_batch(self, X) -> np.ndarray:
        X = as_float_matrix(X, "X")
        require(X.shape[1] == self.d, f"input has dimension {X.shape[1]}, model expects {self.d}")
        return _forward(self, X)[0]

    def embed(self, x) -> np.ndarray:
        x = as_float_vector(x, "x")
        require(x.shape[0] == self.d, f"input has dimension {x.shape[0]}, model expects {self.d}")
        return self.embed_batch(x.reshape(1, -1))[0]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.arch, self.d, self.m, self.hidden, self.params.copy())


def param_count(arch: str, d: int, m: int, hidden: int | None) -> int:
    if arch == "identity":
        return 0
    if arch == "linear":
        return m * d
    if arch == "mlp1":
        h = hidden or 0
        return h * d + h + m * h + m
    raise ValidationError(f"unknown architecture {arch!r}")


def new_model(arch: str, d: int, m: int | None = None, hidden: int | None = None,
              seed: int = 0) -> EmbeddingModel:
    """Create a model with seeded Gaussian weights and zero biases."""
    require(arch in ARCHITECTURES, f"unknown architecture {arch!r}")
    if m is None:
        m = d
    rng = np.random.default_rng(seed)
    if arch == "identity":
        return EmbeddingModel("identity", d, m)
    if arch == "linear":
        params = rng.standard_normal((m, d)).ravel() / np.sqrt(d)
        return EmbeddingModel("linear", d, m, params=params)
    require(hidden is not None and hidden >= 1, "mlp1 requires a positive hidden width")
    w1 = rng.standard_normal((hidden, d)) / np.sqrt(d)
    b1 = np.zeros(hidden)
    w2 = rng.standard_normal((m, hidden)) / np.sqrt(hidden)
    b2 = np.zeros(m)
    params = np.concatenate([w1.ravel(), b1, w2.ravel(), b2])
    return EmbeddingModel("mlp1", d, m, hidden, params)


def _views(model: EmbeddingModel):
    """Reshaped views into the flat parameter vector."""
    if model.arch == "linear":
        return (model.params.reshape(model.m, model.d),)
    h = model.hidden
    p = model.params
    w1 = p[: h * model.d].reshape(h, model.d)
    b1 = p[h * model.d: h * model.d + h]
    off = h * model.d + h
    w2 = p[off: off + model.m * h].reshape(model.m, h)
    b2 = p[off + model.m * h:]
    return w1, b1, w2, b2


def _forward(model: EmbeddingModel, X: np.ndarray):
    if model.arch == "identity":
        return X, (X,)
    if model.arch == "linear":
        (w,) = _views(model)
        return X @ w.T, (X,)
    w1, b1, w2, b2 = _views(model)
    H = np.tanh(X @ w1.T + b1)
    return H @ w2.T + b2, (X, H)


def _vjp(model: EmbeddingModel, cache, dZ: np.ndarray) -> np.ndarray:
    """Gradient of sum(dZ * forward(X)) with respect to the flat parameters."""
    if model.arch == "identity":
        return np.zeros(0)
    if model.arch == "linear":
        (X,) = cache
        return (dZ.T @ X).ravel()
    X, H = cache
    _, _, w2, _ = _views(model)
    dW2 = dZ.T @ H
    dB2 = dZ.sum(axis=0)
    dH = dZ @ w2
    dPre = dH * (1.0 - H * H)
    dW1 = dPre.T @ X
    dB1 = dPre.sum(axis=0)
    return np.concatenate([dW1.ravel(), dB1, dW2.ravel(), dB2])


def save_model(model: EmbeddingModel, path) -> None:
    """Write the model as JSON; parameters round-trip bit-exactly."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "arch": model.arch,
        "d": model.d,
        "m": model.m,
        "hidden": model.hidden,
        "params": [float(v) for v in model.params],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_model(path) -> EmbeddingModel:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"corrupt model file {path}: {exc}") from exc
    require(isinstance(payload, dict) and "format_version" in payload,
            f"corrupt model file {path}: missing header")
    require(payload["format_version"] == MODEL_FORMAT_VERSION,
            f"unknown model format version {payload['format_version']!r}")
    for key in ("arch", "d", "m", "params"):
        require(key in payload, f"corrupt model file {path}: missing field {key!r}")
    hidden = payload.get("hidden")
    return EmbeddingModel(arch=payload["arch"], d=int(payload["d"]), m=int(payload["m"]),
                          hidden=None if hidden is None else int(hidden),
                          params=np.asarray(payload["params"], dtype=float))


@dataclass(eq=False)
class FlatDataset:
    """A merged dataset of input vectors with dense global labels in [0, n_classes)."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = as_float_matrix(self.X, "X")
        self.y = as_label_vector(self.y, self.X.shape[0], "y")
        require(self.n_classes >= 2, "a flat dataset needs at least 2 classes")
        require(bool((self.y < self.n_classes).all()),
                f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.X.shape[0]


def embed_set(model: EmbeddingModel, flat: FlatDataset) -> FlatDataset:
    """Apply the embedding to every input, preserving labels and order."""
    return FlatDataset(X=model.embed_batch(flat.X), y=flat.y.copy(), n_classes=flat.n_classes)


def flat_from_tasks(meta: MetaTrainingSet, parts: tuple[str, ...] = ("support", "query")):
    """Merge task samples into a flat dataset under their ground-truth labels.

    Labels are remapped to a dense 0..C-1 range; the second return value
    maps each dense label back to the original global id.
    """
    xs: list[np.ndarray] = []
    ys: list[int] = []
    for task in meta.tasks:
        for part in parts:
            for s in getattr(task, part):
                require(s.y_true is not None,
                        f"task {task.id} is missing ground-truth labels")
                xs.append(s.x)
                ys.append(int(s.y_true))
    class_ids = np.asarray(sorted(set(ys)), dtype=int)
    lookup = {int(c): i for i, c in enumerate(class_ids)}
    dense = np.asarray([lookup[v] for v in ys], dtype=int)
    return FlatDataset(X=np.asarray(xs), y=dense, n_classes=class_ids.size), class_ids


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent schedule shared by both training modes.

    `batch_size` counts tasks per step for episodic training and samples
    per step for flat pre-training. `decay_at=None` decays the rate at
    2/3 and 5/6 of the epoch budget.
    """

    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 8
    decay_factor: float = 0.1
    decay_at: tuple[int, ...] | None = None
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        require(self.lr > 0, "lr must be positive")
        require(self.epochs >= 1, "epochs must be at least 1")
        require(self.batch_size >= 1, "batch_size must be at least 1")
        require(0 < self.decay_factor <= 1, "decay_factor must be in (0, 1]")
        require(0 <= self.momentum < 1, "momentum must be in [0, 1)")
        require(self.weight_decay >= 0, "weight_decay must be non-negative")

    def boundaries(self) -> tuple[int, ...]:
        if self.decay_at is not None:
            return tuple(self.decay_at)
        return (int(self.epochs * 2 / 3), int(self.epochs * 5 / 6))

    def rate(self, epoch: int) -> float:
        passed = sum(1 for b in self.boundaries() if epoch >= b)
        return self.lr * self.decay_factor ** passed


def _task_tensors(task: Task):
    Xs = np.asarray([s.x for s in task.support])
    ys = np.asarray([s.y_local for s in task.support], dtype=int)
    Xq = np.asarray([s.x for s in task.query])
    yq = np.asarray([s.y_local for s in task.query], dtype=int)
    return Xs, ys, Xq, yq, int(ys.max()) + 1


def _episodic_task_loss(model: EmbeddingModel, tensors, lam: float, want_grad: bool):
    """Query cross-entropy of the ridge head fit on the embedded support set.

    Overflow is tolerated here and reported by the caller's finiteness
    checks as a divergence.
    """
    Xs_raw, ys, Xq_raw, yq, k = tensors
    with np.errstate(over="ignore", invalid="ignore"):
        Zs, cache_s = _forward(model, Xs_raw)
        Zq, cache_q = _forward(model, Xq_raw)
        A = Zs.T @ Zs + len(ys) * lam * np.eye(model.m)
    Ys = one_hot(ys, k)
    if not np.isfinite(A).all():
        raise NumericalError("support embeddings overflowed in the ridge solve")
    factor = cho_factor(A)
    V = cho_solve(factor, Zs.T @ Ys)
    logits = Zq @ V
    ls = log_softmax(logits)
    rows = np.arange(yq.shape[0])
    loss = float(-ls[rows, yq].mean())
    if not want_grad:
        return loss, None
    P = np.exp(ls)
    dLogits = (P - one_hot(yq, k)) / yq.shape[0]
    dV = Zq.T @ dLogits
    dZq = dLogits @ V.T
    dB = cho_solve(factor, dV)
    dA = -dB @ V.T
    dZs = Zs @ (dA + dA.T) + Ys @ dB.T
    grad = _vjp(model, cache_s, dZs) + _vjp(model, cache_q, dZq)
    return loss, grad


def _as_task_list(tasks) -> list[Task]:
    return tasks.tasks if isinstance(tasks, MetaTrainingSet) else list(tasks)


def episodic_loss(model: EmbeddingModel, tasks, ridge: RidgeConfig | None = None) -> float:
    """Mean query loss of per-task ridge heads over a fixed task collection."""
    ridge = ridge or RidgeConfig()
    task_list = _as_task_list(tasks)
    require(len(task_list) > 0, "need at least one task")
    losses = [_episodic_task_loss(model, _task_tensors(t), ridge.lam, False)[0]
              for t in task_list]
    return float(np.mean(losses))


def episodic_grad(model: EmbeddingModel, tasks, ridge: RidgeConfig | None = None):
    """Loss and analytic parameter gradient of the episodic objective."""
    ridge = ridge or RidgeConfig()
    require(model.arch != "identity", "identity models have no trainable parameters")
    task_list = _as_task_list(tasks)
    require(len(task_list) > 0, "need at least one task")
    total = 0.0
    grad = np.zeros_like(model.params)
    for t in task_list:
        loss, g = _episodic_task_loss(model, _task_tensors(t), ridge.lam, True)
        total += loss
        grad += g
    return total / len(task_list), grad / len(task_list)


def train_meta_representation(meta: MetaTrainingSet, arch: str = "linear",
                              out_dim: int | None = None, hidden: int | None = None,
                              ridge: RidgeConfig | None = None,
                              train: TrainConfig | None = None):
    """Learn an embedding by gradient descent through the ridge base learner.

    Returns the trained model and the per-epoch mean training loss.
    """
    ridge = ridge or RidgeConfig()
    train = train or TrainConfig()
    require(arch in ("linear", "mlp1"), "episodic training requires a differentiable model")
    d = meta.dim
    model = new_model(arch, d, out_dim, hidden, seed=train.seed)
    tensors = [_task_tensors(t) for t in meta.tasks]
    rng = np.random.default_rng(train.seed)
    velocity = np.zeros_like(model.params)
    trajectory: list[float] = []
    for epoch in range(train.epochs):
        lr = train.rate(epoch)
        order = rng.permutation(len(tensors))
        epoch_loss = 0.0
        for start in range(0, len(order), train.batch_size):
            batch = order[start:start + train.batch_size]
            loss = 0.0
            grad = np.zeros_like(model.params)
            for i in batch:
                task_loss, g = _episodic_task_loss(model, tensors[i], ridge.lam, True)
                loss += task_loss
                grad += g
            loss /= batch.size
            grad /= batch.size
            if not np.isfinite(loss):
                raise NumericalError(
                    f"episodic loss diverged at epoch {epoch}, step {start // train.batch_size}")
            velocity = train.momentum * velocity + grad + train.weight_decay * model.params
            model.params -= lr * velocity
            if not np.isfinite(model.params).all():
                raise NumericalError(
                    f"parameters diverged at epoch {epoch}, step {start // train.batch_size}")
            epoch_loss += loss * batch.size
        trajectory.append(epoch_loss / len(tensors))
    return model, trajectory


def pretrain_flat(flat: FlatDataset, arch: str = "linear", out_dim: int | None = None,
                  hidden: int | None = None, train: TrainConfig | None = None,
                  checkpoint_hook=None):
    """Jointly train an embedding and a global linear classifier by cross-entropy.

    The returned trajectory holds the full-dataset mean cross-entropy at
    the end of every epoch. `checkpoint_hook(epoch, model, classifier, ce)`
    runs after each epoch; returning a truthy value stops training early.
    """
    train = train or TrainConfig()
    require(arch in ARCHITECTURES, f"unknown architecture {arch!r}")
    d = flat.X.shape[1]
    model = new_model(arch, d, out_dim, hidden, seed=train.seed)
    rng = np.random.default_rng(train.seed)
    C = flat.n_classes
    W = 0.1 * rng.standard_normal((C, model.m)) / np.sqrt(model.m)
    Y = one_hot(flat.y, C)
    vel_theta = np.zeros_like(model.params)
    vel_w = np.zeros_like(W)
    trajectory: list[float] = []

    def full_ce() -> float:
        scores = _forward(model, flat.X)[0] @ W.T
        ls = log_softmax(scores)
        return float(-ls[np.arange(len(flat)), flat.y].mean())

    n = len(flat)
    for epoch in range(train.epochs):
        lr = train.rate(epoch)
        order = rng.permutation(n)
        for start in range(0, n, train.batch_size):
            idx = order[start:start + train.batch_size]
            Xb, yb, Yb = flat.X[idx], flat.y[idx], Y[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                Z, cache = _forward(model, Xb)
                scores = Z @ W.T
                ls = log_softmax(scores)
            loss = float(-ls[np.arange(idx.size), yb].mean())
            if not np.isfinite(loss):
                raise NumericalError(
                    f"pre-training loss diverged at epoch {epoch}, step {start // train.batch_size}")
            dScores = (np.exp(ls) - Yb) / idx.size
            dW = dScores.T @ Z
            dZ = dScores @ W
            dTheta = _vjp(model, cache, dZ)
            vel_w = train.momentum * vel_w + dW + train.weight_decay * W
            W -= lr * vel_w
            if model.params.size:
                vel_theta = train.momentum * vel_theta + dTheta + train.weight_decay * model.params
                model.params -= lr * vel_theta
            if not (np.isfinite(W).all() and np.isfinite(model.params).all()):
                raise NumericalError(
                    f"parameters diverged at epoch {epoch}, step {start // train.batch_size}")
        ce = full_ce()
        trajectory.append(ce)
        if checkpoint_hook is not None:
            classifier = GlobalClassifier(weights=W.copy(), class_ids=np.arange(C))
            if checkpoint_hook(epoch, model.copy(), classifier, ce):
                break
    classifier = GlobalClassifier(weights=W, class_ids=np.arange(C))
    return model, classifier, trajectory


class EpisodicRidgeEmbedder(BaseEstimator, TransformerMixin):
    """Estimator wrapper around `train_meta_representation`.

    `fit` expects a MetaTrainingSet; `transform` embeds raw input rows.
    """

    def __init__(self, arch="linear", out_dim=None, hidden=None, lam=1e-3, lr=0.05,
                 epochs=30, batch_size=8, decay_factor=0.1, decay_at=None,
                 momentum=0.9, weight_decay=5e-4, seed=0):
        self.arch = arch
        self.out_dim = out_dim
        self.hidden = hidden
        self.lam = lam
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.decay_factor = decay_factor
        self.decay_at = decay_at
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y=None):
        require(isinstance(X, MetaTrainingSet), "fit expects a MetaTrainingSet")
        train = TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                            decay_factor=self.decay_factor, decay_at=self.decay_at,
                            momentum=self.momentum, weight_decay=self.weight_decay,
                            seed=self.seed)
        self.model_, self.loss_trajectory_ = train_meta_representation(
            X, arch=self.arch, out_dim=self.out_dim, hidden=self.hidden,
            ridge=RidgeConfig(lam=self.lam), train=train)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.embed_batch(X)


class FlatPretrainEmbedder(BaseEstimator, TransformerMixin):
    """Estimator wrapper around `pretrain_flat`.

    `fit(X, y)` takes raw inputs and dense global labels; `transform`
    embeds inputs and `predict` applies the learned global classifier.
    """

    def __init__(self, arch="linear", out_dim=None, hidden=None, lr=0.05, epochs=30,
                 batch_size=128, decay_factor=0.1, decay_at=None, momentum=0.9,
                 weight_decay=5e-4, seed=0):
        self.arch = arch
        self.out_dim = out_dim
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.decay_factor = decay_factor
        self.decay_at = decay_at
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y):
        X = as_float_matrix(X, "X")
        y = as_label_vector(y, X.shape[0], "y")
        flat = FlatDataset(X=X, y=y, n_classes=int(y.max()) + 1)
        train = TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                            decay_factor=self.decay_factor, decay_at=self.decay_at,
                            momentum=self.momentum, weight_decay=self.weight_decay,
                            seed=self.seed)
        self.model_, self.classifier_, self.loss_trajectory_ = pretrain_flat(
            flat, arch=self.arch, out_dim=self.out_dim, hidden=self.hidden, train=train)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.embed_batch(X)

    def predict(self, X):
        check_is_fitted(self, "model_")
        scores = self.model_.embed_batch(X) @ self.classifier_.weights.T
        return self.classifier_.class_ids[np.argmax(scores, axis=1)]
