"""Experiment configuration.

Run configs are flat text files of `section.key = value` lines with `#`
comments. Unknown keys are rejected. Every stage derives its seed from
the single run seed through fixed offsets, so a config plus a seed pins
the whole pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .embedding import ARCHITECTURES, TrainConfig
from .errors import ValidationError
from .evaluation import BASE_LEARNERS, EvalConfig
from .labeler import LabelerConfig, PruneConfig
from .numeric import LogRegConfig, RidgeConfig
from .tasks import SyntheticWorldConfig, TaskSpec
from .validation import require

STAGE_SEED_OFFSETS = {
    "world": 0,
    "tasks": 1,
    "embed": 2,
    "labels": 3,
    "pretrain": 4,
    "test_tasks": 5,
    "verify": 6,
}


@dataclass
class RunConfig:
    """Every knob of the end-to-end pipeline, one flat dataclass."""

    seed: int = 7
    out_dir: str = "runs/default"

    world_classes: int = 20
    holdout_classes: int = 5
    dim: int = 16
    separation: float = 6.0
    samples_per_class: int = 120

    n_tasks: int = 500
    k: int = 5
    n_support: int = 5
    n_query: int = 15
    replacement: bool = True

    arch: str = "linear"
    out_dim: int = 16
    hidden: int = 32

    ridge_lam: float = 1e-3
    logreg_lam: float = 1.0
    logreg_max_iter: int = 2000
    logreg_tol: float = 1e-6

    train_lr: float = 0.05
    train_epochs: int = 20
    train_batch: int = 8
    train_decay_factor: float = 0.1
    train_decay_at: tuple[int, ...] | None = None
    train_momentum: float = 0.9
    train_weight_decay: float = 5e-4

    pretrain_lr: float = 0.05
    pretrain_epochs: int = 30
    pretrain_batch: int = 128
    pretrain_decay_factor: float = 0.1
    pretrain_decay_at: tuple[int, ...] | None = None
    pretrain_momentum: float = 0.9
    pretrain_weight_decay: float = 5e-4

    j_init: int = 60
    labeler_max_epochs: int = 20
    prune_q: float = 3.0
    prune_basis: str = "match_counts"

    eval_n_test_tasks: int = 200
    eval_k: int = 5
    eval_n_support: int = 5
    eval_n_query: int = 15
    eval_base_learner: str = "logreg"
    eval_logreg_tol: float = 1e-5

    verify_bound_instances: int = 200
    verify_lemma_instances: int = 50
    verify_tightness_epochs: int = 400

    def __post_init__(self):
        require(self.arch in ARCHITECTURES, f"unknown architecture {self.arch!r}")
        require(self.eval_base_learner in BASE_LEARNERS,
                f"unknown base learner {self.eval_base_learner!r}")
        require(self.holdout_classes >= 0, "holdout_classes must be non-negative")

    def stage_seed(self, stage: str) -> int:
        return self.seed + STAGE_SEED_OFFSETS[stage]

    def world_config(self) -> SyntheticWorldConfig:
        return SyntheticWorldConfig(
            n_classes=self.world_classes + self.holdout_classes, dim=self.dim,
            separation=self.separation, samples_per_class=self.samples_per_class,
            seed=self.stage_seed("world"))

    def task_spec(self) -> TaskSpec:
        return TaskSpec(k=self.k, n_support=self.n_support, n_query=self.n_query)

    def eval_spec(self) -> TaskSpec:
        return TaskSpec(k=self.eval_k, n_support=self.eval_n_support,
                        n_query=self.eval_n_query)

    def ridge_config(self) -> RidgeConfig:
        return RidgeConfig(lam=self.ridge_lam)

    def logreg_config(self) -> LogRegConfig:
        return LogRegConfig(lam=self.logreg_lam, max_iter=self.logreg_max_iter,
                            tol=self.logreg_tol)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.train_lr, epochs=self.train_epochs,
                           batch_size=self.train_batch,
                           decay_factor=self.train_decay_factor,
                           decay_at=self.train_decay_at, momentum=self.train_momentum,
                           weight_decay=self.train_weight_decay,
                           seed=self.stage_seed("embed"))

    def pretrain_config(self) -> TrainConfig:
        return TrainConfig(lr=self.pretrain_lr, epochs=self.pretrain_epochs,
                           batch_size=self.pretrain_batch,
                           decay_factor=self.pretrain_decay_factor,
                           decay_at=self.pretrain_decay_at,
                           momentum=self.pretrain_momentum,
                           weight_decay=self.pretrain_weight_decay,
                           seed=self.stage_seed("pretrain"))

    def labeler_config(self) -> LabelerConfig:
        return LabelerConfig(j_init=self.j_init, max_epochs=self.labeler_max_epochs,
                             seed=self.stage_seed("labels"),
                             prune=PruneConfig(q=self.prune_q, basis=self.prune_basis))

    def eval_config(self) -> EvalConfig:
        return EvalConfig(n_test_tasks=self.eval_n_test_tasks, k=self.eval_k,
                          n_support=self.eval_n_support, n_query=self.eval_n_query,
                          base_learner=self.eval_base_learner,
                          logreg_lam=self.logreg_lam, logreg_tol=self.eval_logreg_tol,
                          logreg_max_iter=self.logreg_max_iter,
                          ridge_lam=self.ridge_lam, seed=self.stage_seed("test_tasks"))


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int_tuple(raw: str):
    raw = raw.strip()
    if not raw:
        return None
    return tuple(int(part.strip()) for part in raw.split(","))


# File key -> (RunConfig field, parser). Paths in values are resolved
# relative to the config file by load_config.
SCHEMA = {
    "run.seed": ("seed", int),
    "run.out": ("out_dir", str),
    "world.classes": ("world_classes", int),
    "world.holdout_classes": ("holdout_classes", int),
    "world.dim": ("dim", int),
    "world.separation": ("separation", float),
    "world.samples_per_class": ("samples_per_class", int),
    "tasks.count": ("n_tasks", int),
    "tasks.k": ("k", int),
    "tasks.n_support": ("n_support", int),
    "tasks.n_query": ("n_query", int),
    "tasks.replacement": ("replacement", _parse_bool),
    "embed.arch": ("arch", str),
    "embed.out_dim": ("out_dim", int),
    "embed.hidden": ("hidden", int),
    "ridge.lam": ("ridge_lam", float),
    "logreg.lam": ("logreg_lam", float),
    "logreg.max_iter": ("logreg_max_iter", int),
    "logreg.tol": ("logreg_tol", float),
    "train.lr": ("train_lr", float),
    "train.epochs": ("train_epochs", int),
    "train.batch": ("train_batch", int),
    "train.decay_factor": ("train_decay_factor", float),
    "train.decay_at": ("train_decay_at", _parse_int_tuple),
    "train.momentum": ("train_momentum", float),
    "train.weight_decay": ("train_weight_decay", float),
    "pretrain.lr": ("pretrain_lr", float),
    "pretrain.epochs": ("pretrain_epochs", int),
    "pretrain.batch": ("pretrain_batch", int),
    "pretrain.decay_factor": ("pretrain_decay_factor", float),
    "pretrain.decay_at": ("pretrain_decay_at", _parse_int_tuple),
    "pretrain.momentum": ("pretrain_momentum", float),
    "pretrain.weight_decay": ("pretrain_weight_decay", float),
    "labeler.j_init": ("j_init", int),
    "labeler.max_epochs": ("labeler_max_epochs", int),
    "prune.q": ("prune_q", float),
    "prune.basis": ("prune_basis", str),
    "eval.n_test_tasks": ("eval_n_test_tasks", int),
    "eval.k": ("eval_k", int),
    "eval.n_support": ("eval_n_support", int),
    "eval.n_query": ("eval_n_query", int),
    "eval.base_learner": ("eval_base_learner", str),
    "eval.logreg_tol": ("eval_logreg_tol", float),
    "verify.bound_instances": ("verify_bound_instances", int),
    "verify.lemma_instances": ("verify_lemma_instances", int),
    "verify.tightness_epochs": ("verify_tightness_epochs", int),
}

_PATH_KEYS = {"run.out"}


def default_config() -> RunConfig:
    return RunConfig()


def load_config(path) -> RunConfig:
    """Parse a flat config file on top of the defaults."""
    path = Path(path)
    overrides = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw_line in enumerate(lines, start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'section.key = value'")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ValidationError(f"{path}:{lineno}: unknown config key {key!r}")
        field_name, parser = SCHEMA[key]
        try:
            value = parser(raw_value)
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
        if key in _PATH_KEYS:
            value = str((path.parent / value).resolve())
        overrides[field_name] = value
    cfg = replace(default_config(), **overrides)
    return cfg


def config_digest(cfg: RunConfig) -> dict:
    """A plain, JSON-ready view of a run config."""
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out
