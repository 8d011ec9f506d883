"""Episodic data model.

Few-shot tasks carry only within-task ("local") class indices; an optional
hidden ground-truth global label rides along for evaluation. Synthetic
meta-distributions are built from Gaussian classes with a configurable
minimum inter-mean distance, so label-recovery quality can be checked
against a known ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .validation import require

TASK_FILE_FORMAT = "tasks.v1"


@dataclass(frozen=True)
class TaskSpec:
    """Shape of one episode: k ways with n_support + n_query samples per way."""

    k: int
    n_support: int
    n_query: int

    def __post_init__(self):
        require(self.k >= 2, "k must be at least 2")
        require(self.n_support >= 1, "n_support must be at least 1")
        require(self.n_query >= 1, "n_query must be at least 1")

    @property
    def samples_per_class(self) -> int:
        return self.n_support + self.n_query

    @property
    def samples_per_task(self) -> int:
        return self.k * self.samples_per_class


@dataclass(eq=False)
class Sample:
    """One labeled input vector.

    `y_local` is the within-task class index; `y_true` is the hidden
    global label used only by evaluation code.
    """

    x: np.ndarray
    y_local: int = 0
    y_true: int | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        require(self.x.ndim == 1, "sample x must be a 1-d vector")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.y_local == other.y_local and self.y_true == other.y_true
                and np.array_equal(self.x, other.x))


@dataclass(eq=False)
class Task:
    """A support/query pair sharing one set of local class indices."""

    id: int
    support: list[Sample]
    query: list[Sample]

    def all_samples(self) -> list[Sample]:
        return self.support + self.query

    def local_classes(self) -> list[int]:
        return sorted({s.y_local for s in self.support})

    def group(self, y_local: int) -> list[Sample]:
        """All support and query samples of one local class."""
        return [s for s in self.all_samples() if s.y_local == y_local]

    @property
    def k(self) -> int:
        return len(self.local_classes())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Task):
            return NotImplemented
        return (self.id == other.id and self.support == other.support
                and self.query == other.query)


@dataclass(eq=False)
class MetaTrainingSet:
    """An ordered collection of tasks plus the sampling regime that made it."""

    tasks: list[Task]
    spec: TaskSpec
    replacement: bool

    @property
    def dim(self) -> int:
        return self.tasks[0].support[0].x.shape[0]

    def __len__(self) -> int:
        return len(self.tasks)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetaTrainingSet):
            return NotImplemented
        return (self.spec == other.spec and self.replacement == other.replacement
                and self.tasks == other.tasks)


@dataclass(frozen=True)
class SyntheticWorldConfig:
    """Gaussian-mixture world with unit within-class standard deviation.

    `separation` is the minimum inter-mean distance in units of the
    within-class standard deviation.
    """

    n_classes: int
    dim: int
    separation: float = 6.0
    samples_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        require(self.n_classes >= 1, "n_classes must be at least 1")
        require(self.dim >= 1, "dim must be at least 1")
        require(self.separation >= 0, "separation must be non-negative")
        require(self.samples_per_class >= 1, "samples_per_class must be at least 1")


_PLACEMENT_RETRIES = 10_000


def place_class_means(rng: np.random.Generator, n_classes: int, dim: int,
                      separation: float) -> np.ndarray:
    """Place class means so every pair is at least `separation` apart.

    Means grow outward from the origin: each new mean sits at distance
    U[separation, 2*separation] from a randomly chosen existing mean and is
    rejected if it lands closer than `separation` to any other. Anchoring
    new classes to existing ones keeps nearest-neighbor distances at the
    `separation` scale, which is what controls class overlap.
    """
    means = [np.zeros(dim)]
    retries = 0
    while len(means) < n_classes:
        anchor = means[int(rng.integers(len(means)))]
        direction = rng.standard_normal(dim)
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            continue
        radius = separation * rng.uniform(1.0, 2.0)
        candidate = anchor + (radius / norm) * direction
        dists = np.linalg.norm(np.asarray(means) - candidate, axis=1)
        if bool((dists >= separation).all()):
            means.append(candidate)
        else:
            retries += 1
            if retries > _PLACEMENT_RETRIES:
                raise ValidationError(
                    f"could not place {n_classes} class means at separation "
                    f"{separation} in {dim} dimensions (placement retries exhausted)")
    return np.asarray(means)


def generate_world(cfg: SyntheticWorldConfig) -> list[Sample]:
    """Draw a flat labeled pool from `cfg`, deterministic given its seed."""
    rng = np.random.default_rng(cfg.seed)
    means = place_class_means(rng, cfg.n_classes, cfg.dim, cfg.separation)
    pool: list[Sample] = []
    for c in range(cfg.n_classes):
        X = means[c] + rng.standard_normal((cfg.samples_per_class, cfg.dim))
        pool.extend(Sample(x=row, y_true=c) for row in X)
    return pool


def split_pool_by_class(pool: list[Sample]) -> dict[int, list[Sample]]:
    by_class: dict[int, list[Sample]] = {}
    for s in pool:
        require(s.y_true is not None, "pool samples must carry a global label")
        by_class.setdefault(int(s.y_true), []).append(s)
    return by_class


def sample_tasks(pool: list[Sample], spec: TaskSpec, n_tasks: int,
                 replacement: bool = True, seed: int = 0) -> MetaTrainingSet:
    """Draw `n_tasks` episodes from a flat labeled pool.

    Each task draws `spec.k` distinct global classes and
    `spec.samples_per_class` samples per class. Local labels are a random
    permutation of the chosen classes, so they carry no global
    information. With `replacement=False` samples leave the pool once
    used and no input vector ever repeats across tasks.
    """
    require(n_tasks >= 1, "n_tasks must be at least 1")
    rng = np.random.default_rng(seed)
    by_class = split_pool_by_class(pool)
    need = spec.samples_per_class
    if not replacement:
        require(len(pool) >= n_tasks * spec.samples_per_task,
                f"insufficient pool for no-replacement sampling: {len(pool)} samples "
                f"cannot supply {n_tasks} tasks of {spec.samples_per_task}")
    class_ids = sorted(by_class)
    tasks: list[Task] = []
    for t in range(n_tasks):
        eligible = [c for c in class_ids if len(by_class[c]) >= need]
        require(len(eligible) >= spec.k,
                f"insufficient pool at task {t}: only {len(eligible)} classes still "
                f"have {need} samples, need {spec.k}")
        chosen = rng.choice(len(eligible), size=spec.k, replace=False)
        order = rng.permutation(spec.k)
        support: list[Sample] = []
        query: list[Sample] = []
        for y_local in range(spec.k):
            cls = eligible[int(chosen[int(order[y_local])])]
            bucket = by_class[cls]
            picked = rng.choice(len(bucket), size=need, replace=False)
            drawn = [bucket[int(i)] for i in picked]
            if not replacement:
                for i in sorted((int(i) for i in picked), reverse=True):
                    del bucket[i]
            support.extend(Sample(x=s.x, y_local=y_local, y_true=s.y_true)
                           for s in drawn[:spec.n_support])
            query.extend(Sample(x=s.x, y_local=y_local, y_true=s.y_true)
                         for s in drawn[spec.n_support:])
        tasks.append(Task(id=t, support=support, query=query))
    return MetaTrainingSet(tasks=tasks, spec=spec, replacement=replacement)


def validate_task(task: Task, spec: TaskSpec | None = None, dim: int | None = None) -> None:
    """Check the structural invariants of a single task."""
    require(len(task.support) > 0 and len(task.query) > 0,
            f"task {task.id}: support and query must be non-empty")
    for s in task.all_samples():
        require(s.x.ndim == 1, f"task {task.id}: sample x must be 1-d")
        if dim is not None:
            require(s.x.shape[0] == dim,
                    f"task {task.id}: sample has dimension {s.x.shape[0]}, expected {dim}")

    sup_labels = sorted({s.y_local for s in task.support})
    qry_labels = sorted({s.y_local for s in task.query})
    k = len(sup_labels)
    require(sup_labels == list(range(k)),
            f"task {task.id}: local labels must be exactly 0..{k - 1}")
    require(sup_labels == qry_labels,
            f"task {task.id}: support and query must share the same local label set")

    sup_counts = {c: sum(1 for s in task.support if s.y_local == c) for c in sup_labels}
    qry_counts = {c: sum(1 for s in task.query if s.y_local == c) for c in qry_labels}
    require(len(set(sup_counts.values())) == 1,
            f"task {task.id}: unequal per-class support counts")
    require(len(set(qry_counts.values())) == 1,
            f"task {task.id}: unequal per-class query counts")

    truths: dict[int, int] = {}
    seen_truths: set[int] = set()
    for c in sup_labels:
        group_truths = {s.y_true for s in task.group(c)}
        if group_truths == {None}:
            continue
        require(None not in group_truths and len(group_truths) == 1,
                f"task {task.id}: local class {c} mixes ground-truth labels")
        t = group_truths.pop()
        require(t not in seen_truths,
                f"task {task.id}: two local classes share ground-truth label {t}")
        seen_truths.add(t)
        truths[c] = t

    if spec is not None:
        require(k == spec.k, f"task {task.id}: has {k} classes, spec says {spec.k}")
        require(len(task.support) == spec.k * spec.n_support,
                f"task {task.id}: support size {len(task.support)} != k*n_support")
        require(len(task.query) == spec.k * spec.n_query,
                f"task {task.id}: query size {len(task.query)} != k*n_query")


def validate_meta_set(meta: MetaTrainingSet) -> None:
    """Check every task plus the set-level invariants."""
    require(len(meta.tasks) > 0, "meta-training set must contain tasks")
    dim = meta.dim
    seen_ids: set[int] = set()
    for task in meta.tasks:
        require(task.id not in seen_ids, f"duplicate task id {task.id}")
        seen_ids.add(task.id)
        validate_task(task, spec=meta.spec, dim=dim)
    if not meta.replacement:
        seen: set[bytes] = set()
        for task in meta.tasks:
            for s in task.all_samples():
                key = s.x.tobytes()
                require(key not in seen,
                        f"task {task.id}: input vector repeats across tasks in a "
                        "no-replacement set")
                seen.add(key)


def _sample_record(s: Sample) -> dict:
    rec = {"x": [float(v) for v in s.x], "y_local": int(s.y_local)}
    if s.y_true is not None:
        rec["y_true"] = int(s.y_true)
    return rec


def save_tasks(meta: MetaTrainingSet, path) -> None:
    """Write a meta-training set as JSON lines (header line, then one task per line)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "format": TASK_FILE_FORMAT,
            "replacement": bool(meta.replacement),
            "k": meta.spec.k,
            "n_support": meta.spec.n_support,
            "n_query": meta.spec.n_query,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for task in meta.tasks:
            rec = {
                "id": int(task.id),
                "support": [_sample_record(s) for s in task.support],
                "query": [_sample_record(s) for s in task.query],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _parse_sample(obj, lineno: int, task_id, hide_global: bool) -> Sample:
    where = f"line {lineno}: task {task_id}"
    require(isinstance(obj, dict), f"{where}: sample record must be an object")
    require("x" in obj, f"{where}: sample record missing 'x'")
    require("y_local" in obj, f"{where}: sample record missing 'y_local'")
    x = obj["x"]
    require(isinstance(x, list) and len(x) > 0, f"{where}: 'x' must be a non-empty list")
    y_true = obj.get("y_true")
    if hide_global:
        y_true = None
    try:
        return Sample(x=np.asarray(x, dtype=float), y_local=int(obj["y_local"]),
                      y_true=None if y_true is None else int(y_true))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: malformed sample record ({exc})") from exc


def load_tasks(path, hide_global: bool = False) -> MetaTrainingSet:
    """Read a JSONL task file, validating every record.

    `hide_global=True` strips the hidden ground-truth labels so downstream
    stages can be audited to never read them.
    """
    path = Path(path)
    tasks: list[Task] = []
    header = None
    dim = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: invalid JSON ({exc})") from exc
            if lineno == 1 and isinstance(obj, dict) and "format" in obj:
                require(obj["format"] == TASK_FILE_FORMAT,
                        f"line 1: unsupported task file format {obj['format']!r}")
                header = obj
                continue
            require(isinstance(obj, dict) and "id" in obj,
                    f"line {lineno}: task record must be an object with an 'id'")
            task_id = obj["id"]
            for part in ("support", "query"):
                require(part in obj and isinstance(obj[part], list) and obj[part],
                        f"line {lineno}: task {task_id}: missing or empty '{part}'")
            support = [_parse_sample(rec, lineno, task_id, hide_global)
                       for rec in obj["support"]]
            query = [_parse_sample(rec, lineno, task_id, hide_global)
                     for rec in obj["query"]]
            task = Task(id=int(task_id), support=support, query=query)
            if dim is None:
                dim = task.support[0].x.shape[0]
            try:
                validate_task(task, dim=dim)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
            tasks.append(task)
    require(len(tasks) > 0, "task file contains no tasks")

    first = tasks[0]
    k = first.k
    spec = TaskSpec(k=k, n_support=len(first.support) // k, n_query=len(first.query) // k)
    replacement = True
    if header is not None:
        spec = TaskSpec(k=int(header["k"]), n_support=int(header["n_support"]),
                        n_query=int(header["n_query"]))
        replacement = bool(header["replacement"])
    meta = MetaTrainingSet(tasks=tasks, spec=spec, replacement=replacement)
    validate_meta_set(meta)
    return meta


def max_tasks_without_replacement(pool_size: int, spec: TaskSpec) -> int:
    """How many disjoint tasks a pool of `pool_size` samples can supply."""
    return math.floor(pool_size / spec.samples_per_task)
