"""Clustering and episodic metrics.

Clustering accuracy maps each cluster to the most frequent ground-truth
label of its members. Episodic accuracy fits a base learner on each
embedded support set and scores the query set, reporting a mean with a
normal-approximation 95% confidence half-width over tasks.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingModel
from .numeric import LogRegConfig, RidgeConfig, logreg_fit, ridge_fit
from .validation import require

BASE_LEARNERS = ("logreg", "ridge", "nearest_centroid")


@dataclass(frozen=True)
class EvalConfig:
    """Meta-testing protocol: task shape, base learner, and solver settings."""

    n_test_tasks: int = 200
    k: int = 5
    n_support: int = 5
    n_query: int = 15
    base_learner: str = "logreg"
    logreg_lam: float = 1.0
    logreg_tol: float = 1e-5
    logreg_max_iter: int = 2000
    ridge_lam: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        require(self.n_test_tasks >= 1, "n_test_tasks must be at least 1")
        require(self.k >= 2, "k must be at least 2")
        require(self.n_support >= 1 and self.n_query >= 1, "shots must be positive")
        require(self.base_learner in BASE_LEARNERS,
                f"unknown base learner {self.base_learner!r}")


def majority_mapping(assignments, truths) -> dict[int, int]:
    """Most frequent truth per cluster; ties break toward the smaller label."""
    assignments = np.asarray(assignments, dtype=int).ravel()
    truths = np.asarray(truths, dtype=int).ravel()
    require(assignments.shape == truths.shape, "assignments/truths length mismatch")
    require(assignments.size > 0, "need at least one sample")
    mapping: dict[int, int] = {}
    for cluster in np.unique(assignments):
        members = truths[assignments == cluster]
        values, counts = np.unique(members, return_counts=True)
        mapping[int(cluster)] = int(values[np.argmax(counts)])
    return mapping


def clustering_accuracy(assignments, truths) -> float:
    """Fraction of samples whose truth equals their cluster's majority truth."""
    assignments = np.asarray(assignments, dtype=int).ravel()
    truths = np.asarray(truths, dtype=int).ravel()
    mapping = majority_mapping(assignments, truths)
    predicted = np.asarray([mapping[int(c)] for c in assignments])
    return float((predicted == truths).mean())


@dataclass
class EpisodicResult:
    mean: float
    ci95: float
    per_task: np.ndarray = field(repr=False)
    n_warnings: int = 0


def _nearest_centroid_predict(Zs, ys, Zq, k):
    centroids = np.asarray([Zs[ys == c].mean(axis=0) for c in range(k)])
    d2 = ((Zq[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def episodic_accuracy(model: EmbeddingModel, test_tasks, cfg: EvalConfig) -> EpisodicResult:
    """Per-task query accuracy of a base learner fit on embedded support sets."""
    tasks = test_tasks.tasks if hasattr(test_tasks, "tasks") else list(test_tasks)
    require(len(tasks) > 0, "need at least one test task")
    accuracies = []
    n_warnings = 0
    for task in tasks:
        Zs = model.embed_batch(np.asarray([s.x for s in task.support]))
        ys = np.asarray([s.y_local for s in task.support], dtype=int)
        Zq = model.embed_batch(np.asarray([s.x for s in task.query]))
        yq = np.asarray([s.y_local for s in task.query], dtype=int)
        k = int(ys.max()) + 1
        if cfg.base_learner == "nearest_centroid":
            pred = _nearest_centroid_predict(Zs, ys, Zq, k)
        elif cfg.base_learner == "ridge":
            pred = ridge_fit(Zs, ys, k, RidgeConfig(lam=cfg.ridge_lam)).predict(Zq)
        else:
            head = logreg_fit(Zs, ys, k, LogRegConfig(lam=cfg.logreg_lam,
                                                      max_iter=cfg.logreg_max_iter,
                                                      tol=cfg.logreg_tol))
            n_warnings += 0 if head.converged else 1
            pred = head.predict(Zq)
        accuracies.append(float((pred == yq).mean()))
    per_task = np.asarray(accuracies)
    mean = float(per_task.mean())
    if per_task.size > 1:
        ci95 = float(1.96 * per_task.std(ddof=1) / np.sqrt(per_task.size))
    else:
        ci95 = 0.0
    return EpisodicResult(mean=mean, ci95=ci95, per_task=per_task, n_warnings=n_warnings)


REPORT_COLUMNS = ("variant", "accuracy_mean", "accuracy_ci95", "clustering_accuracy",
                  "percent_clustered", "n_clusters")


@dataclass
class MetricsReport:
    """One comparison row: episodic accuracy plus labeling quality."""

    variant: str
    accuracy_mean: float
    accuracy_ci95: float
    clustering_accuracy: float | None = None
    percent_clustered: float | None = None
    n_clusters: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        require(0.0 <= self.accuracy_mean <= 1.0, "accuracy must lie in [0, 1]")
        if self.clustering_accuracy is not None:
            require(0.0 <= self.clustering_accuracy <= 1.0,
                    "clustering accuracy must lie in [0, 1]")

    def to_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "accuracy_mean": float(self.accuracy_mean),
            "accuracy_ci95": float(self.accuracy_ci95),
            "clustering_accuracy": None if self.clustering_accuracy is None
            else float(self.clustering_accuracy),
            "percent_clustered": None if self.percent_clustered is None
            else float(self.percent_clustered),
            "n_clusters": None if self.n_clusters is None else int(self.n_clusters),
            "metadata": self.metadata,
        }
        return out


def reports_to_json(rows: list[MetricsReport], extra: dict | None = None) -> str:
    payload = {"rows": [r.to_dict() for r in rows]}
    if extra:
        payload.update(extra)
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def reports_to_csv(rows: list[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in rows:
        writer.writerow([
            r.variant,
            repr(float(r.accuracy_mean)),
            repr(float(r.accuracy_ci95)),
            "" if r.clustering_accuracy is None else repr(float(r.clustering_accuracy)),
            "" if r.percent_clustered is None else repr(float(r.percent_clustered)),
            "" if r.n_clusters is None else int(r.n_clusters),
        ])
    return buf.getvalue()
