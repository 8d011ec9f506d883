"""Constrained clustering of per-task class groups.

Each task contributes one mean embedding per local class. Group means are
matched to their nearest centroid; a task updates the state only when its
groups match k distinct clusters. After every pass, clusters whose match
count falls below a binomial-statistics threshold are pruned. A plain
Lloyd k-means baseline is included for comparisons.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .embedding import EmbeddingModel, FlatDataset, new_model
from .errors import PipelineContractError, ValidationError
from .tasks import MetaTrainingSet, Task
from .validation import as_float_matrix, require


@dataclass(frozen=True)
class PruneConfig:
    """Pruning aggressiveness and which running count the threshold applies to."""

    q: float = 3.0
    basis: str = "match_counts"

    def __post_init__(self):
        require(self.q >= 0, "q must be non-negative")
        require(self.basis in ("match_counts", "sample_counts"),
                f"unknown prune basis {self.basis!r}")


@dataclass(frozen=True)
class LabelerConfig:
    j_init: int
    max_epochs: int = 20
    seed: int = 0
    prune: PruneConfig = PruneConfig()

    def __post_init__(self):
        require(self.j_init >= 1, "j_init must be at least 1")
        require(self.max_epochs >= 1, "max_epochs must be at least 1")


@dataclass
class ClusterState:
    """Centroids with their running-average weights and per-epoch match counts.

    May hold zero clusters (an over-aggressive prune); matching requires a
    non-empty state.
    """

    centroids: np.ndarray
    sample_counts: np.ndarray
    match_counts: np.ndarray

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float)
        require(self.centroids.ndim == 2, "centroids must be a 2-d array")
        require(bool(np.isfinite(self.centroids).all()), "centroids must be finite")
        self.sample_counts = np.asarray(self.sample_counts, dtype=np.int64)
        self.match_counts = np.asarray(self.match_counts, dtype=np.int64)
        j = self.centroids.shape[0]
        require(self.sample_counts.shape == (j,), "sample_counts length mismatch")
        require(self.match_counts.shape == (j,), "match_counts length mismatch")
        require(bool((self.sample_counts >= 0).all()), "sample_counts must be non-negative")
        require(bool((self.match_counts >= 0).all()), "match_counts must be non-negative")

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def copy(self) -> "ClusterState":
        return ClusterState(self.centroids.copy(), self.sample_counts.copy(),
                            self.match_counts.copy())


def save_cluster_state(state: ClusterState, path) -> None:
    payload = {
        "m": state.dim,
        "centroids": [[float(v) for v in row] for row in state.centroids],
        "sample_counts": [int(v) for v in state.sample_counts],
        "match_counts": [int(v) for v in state.match_counts],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_cluster_state(path) -> ClusterState:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"corrupt cluster file {path}: {exc}") from exc
    for key in ("m", "centroids", "sample_counts", "match_counts"):
        require(key in payload, f"corrupt cluster file {path}: missing field {key!r}")
    state = ClusterState(centroids=np.asarray(payload["centroids"], dtype=float),
                         sample_counts=payload["sample_counts"],
                         match_counts=payload["match_counts"])
    require(state.dim == int(payload["m"]), f"corrupt cluster file {path}: dimension mismatch")
    return state


def group_means(model: EmbeddingModel, task: Task) -> np.ndarray:
    """Mean embedding of each local class over support and query, ordered by class."""
    means = []
    for c in task.local_classes():
        X = np.asarray([s.x for s in task.group(c)])
        means.append(model.embed_batch(X).mean(axis=0))
    return np.asarray(means)


def init_clusters(model: EmbeddingModel, meta: MetaTrainingSet,
                  cfg: LabelerConfig) -> ClusterState:
    """Seed centroids from the class-group means of ceil(j_init / k) distinct tasks.

    Surplus centroids from the last drawn task are dropped in class-index
    order. Every weight starts at 1 and every match count at 0.
    """
    k = meta.spec.k
    require(cfg.j_init >= k, f"j_init={cfg.j_init} must be at least k={k}")
    needed = math.ceil(cfg.j_init / k)
    require(len(meta.tasks) >= needed,
            f"initialization needs {needed} tasks, meta-training set has {len(meta.tasks)}")
    rng = np.random.default_rng(cfg.seed)
    chosen = rng.choice(len(meta.tasks), size=needed, replace=False)
    centroids: list[np.ndarray] = []
    for idx in chosen:
        centroids.extend(group_means(model, meta.tasks[int(idx)]))
    centroids = centroids[: cfg.j_init]
    j = len(centroids)
    return ClusterState(centroids=np.asarray(centroids),
                        sample_counts=np.ones(j, dtype=np.int64),
                        match_counts=np.zeros(j, dtype=np.int64))


def match_class_group(state: ClusterState, mean: np.ndarray) -> int:
    """Index of the nearest centroid in squared distance; ties go to the lowest index."""
    require(state.n_clusters > 0, "cluster state is empty")
    diffs = state.centroids - np.asarray(mean, dtype=float)
    return int(np.argmin((diffs * diffs).sum(axis=1)))


def _process_group_means(state: ClusterState, means: np.ndarray, group_size: int):
    """Match all groups against the unmodified state, then update if all distinct."""
    matches = [match_class_group(state, mu) for mu in means]
    if len(set(matches)) < len(matches):
        return None
    for v, mu in zip(matches, means):
        n = int(state.sample_counts[v])
        state.centroids[v] = (n * state.centroids[v] + group_size * mu) / (n + group_size)
        state.sample_counts[v] = n + group_size
        state.match_counts[v] += 1
    return matches


def process_task(state: ClusterState, model: EmbeddingModel, task: Task):
    """Run one task through matching; returns its matches or None if discarded.

    Discarded tasks (groups colliding on a cluster) leave the state
    untouched.
    """
    means = group_means(model, task)
    group_size = len(task.all_samples()) // means.shape[0]
    return _process_group_means(state, means, group_size)


def prune(state: ClusterState, n_tasks: int, k: int, cfg: PruneConfig,
          group_size: int | None = None) -> ClusterState:
    """Drop clusters whose count falls below mean - q*std of a binomial model.

    Each of `n_tasks` tasks samples a given cluster with probability
    p = k/J, where J is the cluster count at the start of the epoch, so
    match counts follow B(n_tasks, p). With basis="sample_counts" the
    threshold is scaled by the per-group sample count.
    """
    require(state.n_clusters >= k, "cluster count must be at least k for the binomial model")
    p = k / state.n_clusters
    mean = n_tasks * p
    std = math.sqrt(n_tasks * p * (1.0 - p))
    threshold = mean - cfg.q * std
    if cfg.basis == "match_counts":
        counts = state.match_counts
    else:
        require(group_size is not None, "sample_counts basis needs the per-group size")
        counts = state.sample_counts
        threshold = group_size * threshold
    keep = counts >= threshold
    return ClusterState(centroids=state.centroids[keep],
                        sample_counts=state.sample_counts[keep],
                        match_counts=state.match_counts[keep])


@dataclass
class LabeledTaskSet:
    """Final per-task cluster assignments plus the merged relabeled dataset."""

    task_ids: list[int]
    assignments: list[list[int] | None]
    flat: FlatDataset | None
    percent_clustered: float
    n_clusters: int


@dataclass
class LabelerResult:
    state: ClusterState
    labeled: LabeledTaskSet
    epochs_run: int
    cluster_trajectory: list[int]
    converged: bool


def assign_labels(state: ClusterState, model: EmbeddingModel,
                  meta: MetaTrainingSet) -> LabeledTaskSet:
    """Match-only pass assigning each task's class groups to final clusters.

    Tasks whose groups collide on a cluster are marked discarded. The flat
    dataset holds the raw inputs of every retained task labeled by its
    group's cluster id.
    """
    assignments: list[list[int] | None] = []
    task_ids: list[int] = []
    xs: list[np.ndarray] = []
    ys: list[int] = []
    for task in meta.tasks:
        task_ids.append(task.id)
        means = group_means(model, task)
        matches = [match_class_group(state, mu) for mu in means]
        if len(set(matches)) < len(matches):
            assignments.append(None)
            continue
        assignments.append(matches)
        for s in task.all_samples():
            xs.append(s.x)
            ys.append(matches[s.y_local])
    retained = sum(1 for a in assignments if a is not None)
    flat = None
    if retained and state.n_clusters >= 2:
        flat = FlatDataset(X=np.asarray(xs), y=np.asarray(ys, dtype=int),
                           n_classes=state.n_clusters)
    return LabeledTaskSet(task_ids=task_ids, assignments=assignments, flat=flat,
                          percent_clustered=retained / len(meta.tasks),
                          n_clusters=state.n_clusters)


def learn_labeler(model: EmbeddingModel, meta: MetaTrainingSet,
                  cfg: LabelerConfig) -> LabelerResult:
    """Alternate matching/update passes with pruning until the cluster count settles.

    Counts reset at every epoch (weights to 1, matches to 0) while
    centroids persist. Tasks are processed in stored order. Ends with a
    match-only assignment pass.
    """
    state = init_clusters(model, meta, cfg)
    k = meta.spec.k
    group_size = meta.spec.samples_per_class
    means_per_task = [group_means(model, t) for t in meta.tasks]
    trajectory = [state.n_clusters]
    converged = False
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        j_start = state.n_clusters
        state.sample_counts[:] = 1
        state.match_counts[:] = 0
        n_updated = 0
        for means in means_per_task:
            if _process_group_means(state, means, group_size) is not None:
                n_updated += 1
        # The binomial model counts tasks that deposited matches; discarded
        # tasks contribute nothing, so they are excluded from T.
        state = prune(state, n_updated, k, cfg.prune, group_size=group_size)
        trajectory.append(state.n_clusters)
        epochs_run = epoch + 1
        if state.n_clusters < k:
            error = PipelineContractError(
                f"pruning left {state.n_clusters} clusters (fewer than k={k}); "
                "use a larger q or more initial clusters")
            error.n_clusters = state.n_clusters
            error.cluster_trajectory = trajectory
            raise error
        if state.n_clusters == j_start:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"cluster count did not stabilize within {cfg.max_epochs} epochs; "
            "returning the last state", RuntimeWarning, stacklevel=2)
    labeled = assign_labels(state, model, meta)
    return LabelerResult(state=state, labeled=labeled, epochs_run=epochs_run,
                         cluster_trajectory=trajectory, converged=converged)


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[int(rng.integers(X.shape[0]))]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = X[int(rng.integers(X.shape[0]))]
            continue
        centers[j] = X[int(rng.choice(X.shape[0], p=d2 / total))]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _nearest(X: np.ndarray, centers: np.ndarray):
    d2 = ((X * X).sum(axis=1)[:, None] - 2.0 * (X @ centers.T)
          + (centers * centers).sum(axis=1)[None, :])
    np.maximum(d2, 0.0, out=d2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


def lloyd_kmeans(X: np.ndarray, k: int, seed: int = 0, max_iter: int = 300):
    """Standard Lloyd iterations with k-means++ seeding.

    Runs until assignments stop changing or `max_iter` is hit. Empty
    clusters are re-seeded at the point farthest from its current center.
    Returns (centers, labels, inertia history, iterations).
    """
    X = as_float_matrix(X, "X")
    require(k >= 1, "k must be at least 1")
    require(X.shape[0] >= k, "need at least k samples")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(X, k, rng)
    labels = None
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_labels, d2 = _nearest(X, centers)
        if labels is not None and np.array_equal(new_labels, labels):
            n_iter -= 1
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
            else:
                centers[j] = X[int(np.argmax(d2))]
                d2[int(np.argmax(d2))] = 0.0
        _, d2_after = _nearest(X, centers)
        history.append(float(d2_after.sum()))
    return centers, labels, history, n_iter


def kmeans_baseline(model: EmbeddingModel, meta: MetaTrainingSet, k: int, seed: int = 0,
                    max_iter: int = 300, return_history: bool = False):
    """Fully unsupervised Lloyd clustering of every embedded task sample.

    Ignores all local labels. Returns (centers, per-sample labels) in task
    order, support before query.
    """
    require(k >= 2, "k must be at least 2")
    X = np.asarray([s.x for t in meta.tasks for s in t.all_samples()])
    Z = model.embed_batch(X)
    centers, labels, history, _ = lloyd_kmeans(Z, k, seed=seed, max_iter=max_iter)
    if return_history:
        return centers, labels, history
    return centers, labels


class ConstrainedTaskClusterer(BaseEstimator):
    """Estimator wrapper around `learn_labeler`.

    `fit` expects a MetaTrainingSet; the embedding model defaults to the
    identity map on the task dimension.
    """

    def __init__(self, model=None, j_init=60, q=3.0, prune_basis="match_counts",
                 max_epochs=20, seed=0):
        self.model = model
        self.j_init = j_init
        self.q = q
        self.prune_basis = prune_basis
        self.max_epochs = max_epochs
        self.seed = seed

    def _resolved_model(self, meta: MetaTrainingSet) -> EmbeddingModel:
        return self.model if self.model is not None else new_model("identity", meta.dim)

    def fit(self, X, y=None):
        require(isinstance(X, MetaTrainingSet), "fit expects a MetaTrainingSet")
        cfg = LabelerConfig(j_init=self.j_init, max_epochs=self.max_epochs, seed=self.seed,
                            prune=PruneConfig(q=self.q, basis=self.prune_basis))
        result = learn_labeler(self._resolved_model(X), X, cfg)
        self.result_ = result
        self.state_ = result.state
        self.cluster_centers_ = result.state.centroids
        self.n_clusters_ = result.state.n_clusters
        self.assignments_ = result.labeled.assignments
        self.percent_clustered_ = result.labeled.percent_clustered
        self.cluster_trajectory_ = result.cluster_trajectory
        return self

    def predict(self, X):
        """Match-only assignments for a (new) MetaTrainingSet."""
        check_is_fitted(self, "state_")
        require(isinstance(X, MetaTrainingSet), "predict expects a MetaTrainingSet")
        return assign_labels(self.state_, self._resolved_model(X), X).assignments


class LloydKMeans(BaseEstimator):
    """Minimal k-means estimator over raw feature rows."""

    def __init__(self, n_clusters=8, max_iter=300, seed=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        centers, labels, history, n_iter = lloyd_kmeans(
            X, self.n_clusters, seed=self.seed, max_iter=self.max_iter)
        self.cluster_centers_ = centers
        self.labels_ = labels
        self.inertia_ = history[-1] if history else 0.0
        self.n_iter_ = n_iter
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        labels, _ = _nearest(as_float_matrix(X, "X"), self.cluster_centers_)
        return labels
