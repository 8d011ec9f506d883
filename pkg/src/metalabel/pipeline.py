"""End-to-end experiment runner shared by the CLI, comparisons, and sweeps."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .embedding import EmbeddingModel, new_model, pretrain_flat, train_meta_representation
from .evaluation import MetricsReport, clustering_accuracy, episodic_accuracy
from .labeler import LabelerResult, kmeans_baseline, learn_labeler
from .tasks import MetaTrainingSet, Sample, generate_world, sample_tasks
from .validation import require

VARIANTS = ("constrained", "kmeans", "none")


def build_pools(cfg: RunConfig):
    """Generate the synthetic world and split classes into train and holdout pools."""
    pool = generate_world(cfg.world_config())
    train_pool = [s for s in pool if s.y_true < cfg.world_classes]
    test_pool = [s for s in pool if s.y_true >= cfg.world_classes]
    return train_pool, test_pool


def build_train_tasks(cfg: RunConfig, train_pool: list[Sample]) -> MetaTrainingSet:
    return sample_tasks(train_pool, cfg.task_spec(), cfg.n_tasks,
                        replacement=cfg.replacement, seed=cfg.stage_seed("tasks"))


def build_test_tasks(cfg: RunConfig, test_pool: list[Sample]) -> MetaTrainingSet:
    require(len(test_pool) > 0,
            "no holdout classes available for meta-testing; set world.holdout_classes > 0")
    return sample_tasks(test_pool, cfg.eval_spec(), cfg.eval_n_test_tasks,
                        replacement=True, seed=cfg.stage_seed("test_tasks"))


def initial_embedding(cfg: RunConfig, meta: MetaTrainingSet):
    """The embedding used to measure sample similarity before labels exist."""
    if cfg.arch == "identity":
        return new_model("identity", meta.dim), []
    return train_meta_representation(meta, arch=cfg.arch, out_dim=cfg.out_dim,
                                     hidden=cfg.hidden, ridge=cfg.ridge_config(),
                                     train=cfg.train_config())


def _truths_for_retained(meta: MetaTrainingSet, result: LabelerResult):
    assignments = []
    truths = []
    for task, matched in zip(meta.tasks, result.labeled.assignments):
        if matched is None:
            continue
        for s in task.all_samples():
            assignments.append(matched[s.y_local])
            truths.append(s.y_true)
    return np.asarray(assignments), truths


@dataclass
class SharedStages:
    """World, tasks, and initial embedding reused across pipeline variants."""

    train_tasks: MetaTrainingSet
    test_tasks: MetaTrainingSet
    model0: EmbeddingModel
    embed_trajectory: list[float]


def prepare_shared(cfg: RunConfig) -> SharedStages:
    train_pool, test_pool = build_pools(cfg)
    train_tasks = build_train_tasks(cfg, train_pool)
    test_tasks = build_test_tasks(cfg, test_pool)
    model0, trajectory = initial_embedding(cfg, train_tasks)
    return SharedStages(train_tasks=train_tasks, test_tasks=test_tasks,
                        model0=model0, embed_trajectory=trajectory)


def run_variant(cfg: RunConfig, shared: SharedStages, labeling: str) -> MetricsReport:
    """One pipeline variant: label (or not), pre-train, evaluate."""
    require(labeling in VARIANTS, f"unknown pipeline variant {labeling!r}")
    meta = shared.train_tasks
    clustering_acc = None
    percent = None
    n_clusters = None
    metadata: dict = {"labeling": labeling, "seed": cfg.seed}
    has_truth = all(s.y_true is not None
                    for t in meta.tasks for s in t.all_samples())

    if labeling == "none":
        final_model = shared.model0
    elif labeling == "constrained":
        result = learn_labeler(shared.model0, meta, cfg.labeler_config())
        n_clusters = result.state.n_clusters
        percent = result.labeled.percent_clustered
        metadata["labeler_epochs"] = result.epochs_run
        metadata["cluster_trajectory"] = result.cluster_trajectory
        if has_truth:
            assignments, truths = _truths_for_retained(meta, result)
            clustering_acc = clustering_accuracy(assignments, truths)
        require(result.labeled.flat is not None, "labeling retained no tasks")
        final_model, _, _ = pretrain_flat(result.labeled.flat, arch=cfg.arch,
                                          out_dim=cfg.out_dim, hidden=cfg.hidden,
                                          train=cfg.pretrain_config())
    else:
        k = cfg.world_classes
        _, labels = kmeans_baseline(shared.model0, meta, k,
                                    seed=cfg.stage_seed("labels"))
        n_clusters = k
        percent = 1.0
        if has_truth:
            truths = [s.y_true for t in meta.tasks for s in t.all_samples()]
            clustering_acc = clustering_accuracy(labels, truths)
        from .embedding import FlatDataset

        X = np.asarray([s.x for t in meta.tasks for s in t.all_samples()])
        flat = FlatDataset(X=X, y=np.asarray(labels, dtype=int), n_classes=k)
        final_model, _, _ = pretrain_flat(flat, arch=cfg.arch, out_dim=cfg.out_dim,
                                          hidden=cfg.hidden, train=cfg.pretrain_config())

    result = episodic_accuracy(final_model, shared.test_tasks, cfg.eval_config())
    metadata["eval_warnings"] = result.n_warnings
    return MetricsReport(variant=labeling, accuracy_mean=result.mean,
                         accuracy_ci95=result.ci95, clustering_accuracy=clustering_acc,
                         percent_clustered=percent, n_clusters=n_clusters,
                         metadata=metadata)


def compare_pipelines(cfg: RunConfig, variants=("constrained", "kmeans", "none")):
    """Run several pipeline variants over one shared seeded world and task set.

    A variant that fails is recorded as an error row; the remaining rows
    are unaffected.
    """
    shared = prepare_shared(cfg)
    rows: list[MetricsReport] = []
    for variant in variants:
        try:
            rows.append(run_variant(cfg, shared, variant))
        except Exception as exc:  # noqa: BLE001 - per-row isolation is the contract
            rows.append(_error_row(variant, exc))
    return rows


def _error_row(variant: str, exc: Exception) -> MetricsReport:
    metadata = {"error": f"{type(exc).__name__}: {exc}"}
    if hasattr(exc, "cluster_trajectory"):
        metadata["cluster_trajectory"] = exc.cluster_trajectory
    return MetricsReport(variant=variant, accuracy_mean=0.0, accuracy_ci95=0.0,
                         n_clusters=getattr(exc, "n_clusters", None), metadata=metadata)


SWEEP_PARAMS = ("q", "separation")


def sweep_parameter(cfg: RunConfig, param: str, values) -> list[MetricsReport]:
    """Run the constrained pipeline per value of a swept parameter.

    Sweeping `q` reuses the world, tasks, and initial embedding; sweeping
    `separation` rebuilds the world per value.
    """
    require(param in SWEEP_PARAMS, f"unknown sweep parameter {param!r}")
    rows: list[MetricsReport] = []
    if param == "q":
        shared = prepare_shared(cfg)
        for value in values:
            try:
                row = run_variant(replace(cfg, prune_q=float(value)), shared, "constrained")
            except Exception as exc:  # noqa: BLE001 - per-row isolation is the contract
                row = _error_row("constrained", exc)
            row.metadata.update({"param": param, "value": float(value)})
            rows.append(row)
    else:
        for value in values:
            row = compare_pipelines(replace(cfg, separation=float(value)),
                                    variants=("constrained",))[0]
            row.metadata.update({"param": param, "value": float(value)})
            rows.append(row)
    return rows
