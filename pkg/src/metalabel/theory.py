"""Numerical checks relating flat multi-class training to episodic losses.

A global classifier's row-submatrix, indexed by a task's sorted unique
labels, acts as that task's classifier. Restricting the softmax to a
task's own classes can only shrink the normalizing denominator, so the
mean task-restricted cross-entropy never exceeds the flat cross-entropy
computed with the full classifier. These routines evaluate both sides
and report the gap; the gap must vanish as the flat loss goes to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingModel, FlatDataset, TrainConfig, new_model, pretrain_flat
from .errors import ValidationError
from .numeric import GlobalClassifier, LinearClassifier, log_softmax
from .tasks import MetaTrainingSet
from .validation import as_float_matrix, require


def submatrix_for(clf: GlobalClassifier, labels):
    """Rows of the global classifier for the sorted unique values of `labels`.

    Returns the restricted classifier and the map from global label to its
    local row index, so evaluation code cannot silently misalign rows.
    """
    labels = np.asarray(labels, dtype=int).ravel()
    require(labels.size > 0, "label multiset must be non-empty")
    uniq = np.unique(labels)
    require(uniq.size >= 2, "need at least 2 distinct classes for a task classifier")
    rows = clf.rows_of(uniq)
    row_map = {int(label): i for i, label in enumerate(uniq)}
    return LinearClassifier(weights=clf.weights[rows].copy()), row_map


def w_global(clf: GlobalClassifier, X, y):
    """The base learner that depends only on a dataset's label set.

    `X` is validated for shape but otherwise ignored; the returned
    classifier is exactly the row-submatrix for `y`.
    """
    X = as_float_matrix(X, "X")
    y = np.asarray(y, dtype=int).ravel()
    require(X.shape[0] == y.shape[0], "X and y must have matching lengths")
    return submatrix_for(clf, y)


def restricted_task_ce(clf: GlobalClassifier, Z, y_global) -> float:
    """Mean cross-entropy of embedded samples under their task's row-submatrix."""
    Z = as_float_matrix(Z, "Z")
    sub, row_map = submatrix_for(clf, y_global)
    local = np.asarray([row_map[int(v)] for v in np.asarray(y_global).ravel()])
    ls = log_softmax(Z @ sub.weights.T)
    return float(-ls[np.arange(Z.shape[0]), local].mean())


def full_ce(clf: GlobalClassifier, Z, y_global) -> float:
    """Mean cross-entropy of embedded samples under the full classifier."""
    Z = as_float_matrix(Z, "Z")
    rows = clf.rows_of(y_global)
    ls = log_softmax(Z @ clf.weights.T)
    return float(-ls[np.arange(Z.shape[0]), rows].mean())


def check_disjoint_queries(query_sets) -> None:
    """Reject query collections where any input vector appears twice."""
    seen: set[bytes] = set()
    for X, _ in query_sets:
        for row in np.asarray(X, dtype=float):
            key = row.tobytes()
            if key in seen:
                raise ValidationError("query sets are not pairwise disjoint")
            seen.add(key)


@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    gap: float
    passed: bool


def verify_upper_bound(clf: GlobalClassifier, model: EmbeddingModel, query_sets,
                       tol: float = 1e-9) -> BoundCheck:
    """Evaluate both sides of the task-restriction inequality.

    `query_sets` is a list of (X, y_global) pairs of equal sizes. The
    left side averages task-restricted cross-entropies; the right side is
    the flat cross-entropy of the merged collection under the full
    classifier. Passes when lhs <= rhs + tol.
    """
    query_sets = list(query_sets)
    require(len(query_sets) > 0, "need at least one query set")
    sizes = {np.asarray(X).shape[0] for X, _ in query_sets}
    require(len(sizes) == 1, "query sets must all have the same size")
    check_disjoint_queries(query_sets)

    lhs_terms = []
    merged_Z = []
    merged_y = []
    for X, y in query_sets:
        Z = model.embed_batch(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=int).ravel()
        require(Z.shape[0] == y.shape[0], "X and y must have matching lengths")
        lhs_terms.append(restricted_task_ce(clf, Z, y))
        merged_Z.append(Z)
        merged_y.append(y)
    lhs = float(np.mean(lhs_terms))
    rhs = full_ce(clf, np.vstack(merged_Z), np.concatenate(merged_y))
    gap = rhs - lhs
    return BoundCheck(lhs=lhs, rhs=rhs, gap=gap, passed=bool(lhs <= rhs + tol))


@dataclass
class LemmaCheck:
    lhs: float
    rhs: float
    max_abs_diff: float
    passed: bool


def verify_lemma_equality(clf: GlobalClassifier, model: EmbeddingModel,
                          meta: MetaTrainingSet, tol: float = 1e-12) -> LemmaCheck:
    """Check that the label-set base learner makes both episodic losses equal.

    The left side fits the base learner on each support set and scores the
    query set; the right side restricts the classifier directly by the
    query labels. Support and query must share label sets per task.
    """
    lhs_terms = []
    rhs_terms = []
    for task in meta.tasks:
        Xs = np.asarray([s.x for s in task.support])
        ys = np.asarray([s.y_true for s in task.support], dtype=int)
        Xq = np.asarray([s.x for s in task.query])
        yq = np.asarray([s.y_true for s in task.query], dtype=int)
        if set(ys.tolist()) != set(yq.tolist()):
            raise ValidationError(
                f"task {task.id}: support and query label sets differ")
        Zq = model.embed_batch(Xq)
        head, row_map = w_global(clf, model.embed_batch(Xs), ys)
        local = np.asarray([row_map[int(v)] for v in yq])
        ls = log_softmax(Zq @ head.weights.T)
        lhs_terms.append(float(-ls[np.arange(Zq.shape[0]), local].mean()))
        rhs_terms.append(restricted_task_ce(clf, Zq, yq))
    lhs = float(np.mean(lhs_terms))
    rhs = float(np.mean(rhs_terms))
    diff = float(np.max(np.abs(np.asarray(lhs_terms) - np.asarray(rhs_terms))))
    return LemmaCheck(lhs=lhs, rhs=rhs, max_abs_diff=diff, passed=bool(diff <= tol))


def query_collection(meta: MetaTrainingSet):
    """Per-task (X, y_true) query arrays, validated for disjointness."""
    sets = []
    for task in meta.tasks:
        X = np.asarray([s.x for s in task.query])
        require(all(s.y_true is not None for s in task.query),
                f"task {task.id} is missing ground-truth labels")
        y = np.asarray([s.y_true for s in task.query], dtype=int)
        sets.append((X, y))
    check_disjoint_queries(sets)
    return sets


@dataclass
class TightnessReport:
    """Per-checkpoint (rhs, gap) pairs from training toward zero flat loss."""

    checkpoints: list[tuple[float, float]]
    thresholds_reached: dict[float, bool]
    bound_held: bool
    final_rhs: float
    final_gap: float


def verify_tightness(meta: MetaTrainingSet, arch: str = "linear",
                     out_dim: int | None = None, hidden: int | None = None,
                     train: TrainConfig | None = None,
                     thresholds: tuple[float, ...] = (1e-1, 1e-2, 1e-3),
                     tol: float = 1e-9) -> TightnessReport:
    """Train on the merged query sets and watch the gap follow the loss down.

    At every epoch-end checkpoint the gap must be non-negative (the bound)
    and can never exceed the flat loss itself, so driving the flat loss
    under a threshold drives the gap under it too. Failure to reach a
    threshold is reported, not raised.
    """
    train = train or TrainConfig()
    sets = query_collection(meta)
    sizes = {X.shape[0] for X, _ in sets}
    require(len(sizes) == 1, "query sets must all have the same size")
    xs = np.vstack([X for X, _ in sets])
    raw_labels = np.concatenate([y for _, y in sets])
    class_ids = np.unique(raw_labels)
    require(class_ids.size >= 2, "need at least 2 classes")
    lookup = {int(c): i for i, c in enumerate(class_ids)}
    dense_sets = [(X, np.asarray([lookup[int(v)] for v in y])) for X, y in sets]
    flat = FlatDataset(X=xs, y=np.asarray([lookup[int(v)] for v in raw_labels]),
                       n_classes=class_ids.size)

    floor = min(thresholds)
    checkpoints: list[tuple[float, float]] = []

    def hook(epoch, model, classifier, ce):
        lhs = float(np.mean([restricted_task_ce(classifier, model.embed_batch(X), y)
                             for X, y in dense_sets]))
        checkpoints.append((ce, ce - lhs))
        return ce < floor

    pretrain_flat(flat, arch=arch, out_dim=out_dim, hidden=hidden, train=train,
                  checkpoint_hook=hook)
    rhs_values = [rhs for rhs, _ in checkpoints]
    gaps = [gap for _, gap in checkpoints]
    bound_held = all(gap >= -tol and gap <= rhs + tol
                     for rhs, gap in checkpoints)
    reached = {thr: any(rhs < thr for rhs in rhs_values) for thr in thresholds}
    return TightnessReport(checkpoints=checkpoints, thresholds_reached=reached,
                           bound_held=bound_held, final_rhs=rhs_values[-1],
                           final_gap=gaps[-1])


def random_bound_instance(seed: int, n_classes: int = 20, m: int = 8, n_tasks: int = 10,
                          k: int = 5, n_query: int = 15):
    """A random classifier plus disjoint k-way query sets of random embeddings.

    Inputs already live in embedding space, so pair the instance with an
    identity model.
    """
    rng = np.random.default_rng(seed)
    clf = GlobalClassifier(weights=rng.standard_normal((n_classes, m)),
                           class_ids=np.arange(n_classes))
    query_sets = []
    for _ in range(n_tasks):
        classes = rng.choice(n_classes, size=k, replace=False)
        X = rng.standard_normal((k * n_query, m))
        y = np.repeat(np.sort(classes), n_query)
        query_sets.append((X, y))
    model = new_model("identity", m)
    return clf, model, query_sets


def separable_episodic_instance(seed: int, n_classes: int = 6, dim: int = 8,
                                n_tasks: int = 10, k: int = 3, n_support: int = 1,
                                n_query: int = 10, scale: float = 6.0):
    """A globally-labeled meta-training set with axis-aligned Gaussian classes.

    Class c sits at scale * e_c, so inputs stay well conditioned for
    gradient descent and the merged dataset is linearly separable. Samples
    are drawn without replacement, keeping query sets disjoint.
    """
    from .tasks import sample_tasks, Sample

    require(dim >= n_classes, "dim must be at least n_classes for axis-aligned means")
    rng = np.random.default_rng(seed)
    spec_k = k
    per_class = n_tasks * (n_support + n_query)  # worst case one class in every task
    pool: list[Sample] = []
    for c in range(n_classes):
        mean = np.zeros(dim)
        mean[c] = scale
        X = mean + rng.standard_normal((per_class, dim))
        pool.extend(Sample(x=row, y_true=c) for row in X)
    from .tasks import TaskSpec

    return sample_tasks(pool, TaskSpec(k=spec_k, n_support=n_support, n_query=n_query),
                        n_tasks, replacement=False, seed=seed + 1)


def random_episodic_instance(seed: int, n_classes: int = 20, m: int = 8, n_tasks: int = 10,
                             k: int = 5, n_support: int = 5, n_query: int = 15):
    """A random classifier plus a globally-labeled meta-training set."""
    from .tasks import MetaTrainingSet as _MTS, Sample, Task, TaskSpec

    rng = np.random.default_rng(seed)
    clf = GlobalClassifier(weights=rng.standard_normal((n_classes, m)),
                           class_ids=np.arange(n_classes))
    tasks = []
    for t in range(n_tasks):
        classes = rng.choice(n_classes, size=k, replace=False)
        support = []
        query = []
        for y_local in range(k):
            truth = int(classes[y_local])
            for _ in range(n_support):
                support.append(Sample(x=rng.standard_normal(m), y_local=y_local, y_true=truth))
            for _ in range(n_query):
                query.append(Sample(x=rng.standard_normal(m), y_local=y_local, y_true=truth))
        tasks.append(Task(id=t, support=support, query=query))
    meta = _MTS(tasks=tasks, spec=TaskSpec(k=k, n_support=n_support, n_query=n_query),
                replacement=True)
    model = new_model("identity", m)
    return clf, model, meta
