"""Command-line pipeline.

Each subcommand runs one stage, writes its artifact into the output
directory, and records a manifest with input/output content hashes, the
seed, and wall time. Stages communicate only through files, so any stage
can be re-run or audited in isolation.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 pipeline contract violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, config_digest, default_config, load_config
from .embedding import FlatDataset, load_model, new_model, pretrain_flat, save_model, \
    train_meta_representation
from .errors import NumericalError, PipelineContractError, ValidationError
from .evaluation import MetricsReport, clustering_accuracy, episodic_accuracy, \
    reports_to_csv, reports_to_json
from .labeler import learn_labeler, load_cluster_state, save_cluster_state
from .manifest import write_manifest
from .pipeline import build_pools, build_test_tasks, build_train_tasks, sweep_parameter
from .tasks import load_tasks, save_tasks
from .theory import TightnessReport, random_bound_instance, random_episodic_instance, \
    separable_episodic_instance, verify_lemma_equality, verify_tightness, \
    verify_upper_bound
from .validation import require

ARTIFACTS = {
    "tasks": "tasks.jsonl",
    "test_tasks": "test_tasks.jsonl",
    "embed0": "embed0.model",
    "clusters": "clusters.json",
    "labels": "labels.jsonl",
    "embed_star": "embed_star.model",
    "report_json": "report.json",
    "report_csv": "report.csv",
    "verification": "verification.json",
    "sweep_json": "sweep.json",
    "sweep_csv": "sweep.csv",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="flat config file")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--hide-global", action="store_true",
                        help="strip hidden ground-truth labels when loading tasks")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (recorded; stages are deterministic)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metalabel",
                     description="Infer latent global labels from episodic tasks and "
                                 "pre-train embeddings on them.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen-tasks", "generate a synthetic world and sample train/test tasks"),
        ("train-embed", "train the initial embedding on episodic tasks"),
        ("infer-labels", "cluster class groups into latent global labels"),
        ("pretrain", "pre-train an embedding on the inferred flat dataset"),
        ("eval", "evaluate embeddings on held-out test tasks"),
        ("verify-bounds", "run the loss-bound verification suite"),
        ("sweep", "run the pipeline over a grid of one parameter"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--param", choices=("q", "separation"), required=True)
            p.add_argument("--values", required=True,
                           help="comma-separated values, e.g. 1,2,3,4")
    return parser


def _resolve(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out_dir = Path(args.out) if args.out is not None else Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


def _manifest(out_dir: Path, stage: str, args, cfg: RunConfig, *, inputs=(), outputs=(),
              t0: float, extra: dict | None = None) -> None:
    write_manifest(out_dir / f"{stage}.manifest.json", stage,
                   seed=cfg.seed, config_path=args.config,
                   inputs=inputs, outputs=outputs,
                   wall_time_s=time.perf_counter() - t0,
                   extra={"hide_global": bool(args.hide_global),
                          "threads": int(args.threads),
                          "run_config": config_digest(cfg), **(extra or {})})


def cmd_gen_tasks(args) -> int:
    cfg, out = _resolve(args)
    t0 = time.perf_counter()
    train_pool, test_pool = build_pools(cfg)
    meta = build_train_tasks(cfg, train_pool)
    tasks_path = out / ARTIFACTS["tasks"]
    save_tasks(meta, tasks_path)
    outputs = [tasks_path]
    extra = {"n_tasks": len(meta.tasks)}
    if test_pool:
        test_tasks = build_test_tasks(cfg, test_pool)
        test_path = out / ARTIFACTS["test_tasks"]
        save_tasks(test_tasks, test_path)
        outputs.append(test_path)
        extra["n_test_tasks"] = len(test_tasks.tasks)
    _manifest(out, "gen-tasks", args, cfg, outputs=outputs, t0=t0, extra=extra)
    print(f"wrote {', '.join(str(p) for p in outputs)}")
    return 0


def cmd_train_embed(args) -> int:
    cfg, out = _resolve(args)
    t0 = time.perf_counter()
    tasks_path = out / ARTIFACTS["tasks"]
    meta = load_tasks(tasks_path, hide_global=args.hide_global)
    if cfg.arch == "identity":
        model = new_model("identity", meta.dim)
        trajectory = []
    else:
        model, trajectory = train_meta_representation(
            meta, arch=cfg.arch, out_dim=cfg.out_dim, hidden=cfg.hidden,
            ridge=cfg.ridge_config(), train=cfg.train_config())
    model_path = out / ARTIFACTS["embed0"]
    save_model(model, model_path)
    _manifest(out, "train-embed", args, cfg, inputs=[tasks_path], outputs=[model_path],
              t0=t0, extra={"loss_trajectory": trajectory})
    print(f"wrote {model_path}")
    return 0


def cmd_infer_labels(args) -> int:
    cfg, out = _resolve(args)
    t0 = time.perf_counter()
    tasks_path = out / ARTIFACTS["tasks"]
    model_path = out / ARTIFACTS["embed0"]
    meta = load_tasks(tasks_path, hide_global=args.hide_global)
    model = load_model(model_path)
    result = learn_labeler(model, meta, cfg.labeler_config())
    clusters_path = out / ARTIFACTS["clusters"]
    save_cluster_state(result.state, clusters_path)
    labels_path = out / ARTIFACTS["labels"]
    with labels_path.open("w", encoding="utf-8") as fh:
        for task_id, assignment in zip(result.labeled.task_ids,
                                       result.labeled.assignments):
            record = {"task_id": int(task_id),
                      "assignment": "discarded" if assignment is None
                      else [int(v) for v in assignment]}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    _manifest(out, "infer-labels", args, cfg, inputs=[tasks_path, model_path],
              outputs=[clusters_path, labels_path], t0=t0,
              extra={"n_clusters": result.state.n_clusters,
                     "epochs_run": result.epochs_run,
                     "cluster_trajectory": result.cluster_trajectory,
                     "percent_clustered": result.labeled.percent_clustered,
                     "y_true_visible": not args.hide_global})
    print(f"wrote {clusters_path} and {labels_path} "
          f"({result.state.n_clusters} clusters, "
          f"{result.labeled.percent_clustered:.1%} of tasks clustered)")
    return 0


def load_labels(path) -> dict[int, list[int] | None]:
    assignments: dict[int, list[int] | None] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: invalid JSON ({exc})") from exc
            require(isinstance(obj, dict) and "task_id" in obj and "assignment" in obj,
                    f"line {lineno}: label record needs task_id and assignment")
            value = obj["assignment"]
            assignments[int(obj["task_id"])] = (None if value == "discarded"
                                                else [int(v) for v in value])
    return assignments


def cmd_pretrain(args) -> int:
    cfg, out = _resolve(args)
    t0 = time.perf_counter()
    tasks_path = out / ARTIFACTS["tasks"]
    labels_path = out / ARTIFACTS["labels"]
    clusters_path = out / ARTIFACTS["clusters"]
    meta = load_tasks(tasks_path, hide_global=args.hide_global)
    assignments = load_labels(labels_path)
    state = load_cluster_state(clusters_path)
    xs, ys = [], []
    for task in meta.tasks:
        require(task.id in assignments, f"task {task.id} missing from {labels_path}")
        matched = assignments[task.id]
        if matched is None:
            continue
        for s in task.all_samples():
            xs.append(s.x)
            ys.append(matched[s.y_local])
    require(len(xs) > 0, "no clustered tasks available for pre-training")
    flat = FlatDataset(X=np.asarray(xs), y=np.asarray(ys, dtype=int),
                       n_classes=state.n_clusters)
    model, _, trajectory = pretrain_flat(flat, arch=cfg.arch, out_dim=cfg.out_dim,
                                         hidden=cfg.hidden, train=cfg.pretrain_config())
    model_path = out / ARTIFACTS["embed_star"]
    save_model(model, model_path)
    _manifest(out, "pretrain", args, cfg,
              inputs=[tasks_path, labels_path, clusters_path], outputs=[model_path],
              t0=t0, extra={"loss_trajectory": trajectory,
                            "n_pretrain_samples": len(flat)})
    print(f"wrote {model_path}")
    return 0


def _clustering_metrics(out: Path, args):
    tasks_path = out / ARTIFACTS["tasks"]
    labels_path = out / ARTIFACTS["labels"]
    clusters_path = out / ARTIFACTS["clusters"]
    if not (tasks_path.exists() and labels_path.exists() and clusters_path.exists()):
        return None, None, None, []
    meta = load_tasks(tasks_path, hide_global=args.hide_global)
    assignments_by_task = load_labels(labels_path)
    state = load_cluster_state(clusters_path)
    retained = sum(1 for a in assignments_by_task.values() if a is not None)
    percent = retained / len(meta.tasks)
    has_truth = all(s.y_true is not None for t in meta.tasks for s in t.all_samples())
    acc = None
    if has_truth:
        flat_assignments, truths = [], []
        for task in meta.tasks:
            matched = assignments_by_task.get(task.id)
            if matched is None:
                continue
            for s in task.all_samples():
                flat_assignments.append(matched[s.y_local])
                truths.append(s.y_true)
        if flat_assignments:
            acc = clustering_accuracy(flat_assignments, truths)
    return acc, percent, state.n_clusters, [tasks_path, labels_path, clusters_path]


def cmd_eval(args) -> int:
    cfg, out = _resolve(args)
    t0 = time.perf_counter()
    test_path = out / ARTIFACTS["test_tasks"]
    require(test_path.exists(), f"missing test task file {test_path}")
    test_tasks = load_tasks(test_path)
    acc, percent, n_clusters, cluster_inputs = _clustering_metrics(out, args)

    rows: list[MetricsReport] = []
    inputs = [test_path, *cluster_inputs]
    for variant, artifact in (("initial_embedding", "embed0"),
                              ("pretrained", "embed_star")):
        model_path = out / ARTIFACTS[artifact]
        if not model_path.exists():
            continue
        inputs.append(model_path)
        model = load_model(model_path)
        result = episodic_accuracy(model, test_tasks, cfg.eval_config())
        rows.append(MetricsReport(
            variant=variant, accuracy_mean=result.mean, accuracy_ci95=result.ci95,
            clustering_accuracy=acc if variant == "pretrained" else None,
            percent_clustered=percent if variant == "pretrained" else None,
            n_clusters=n_clusters if variant == "pretrained" else None,
            metadata={"seed": cfg.seed, "base_learner": cfg.eval_base_learner,
                      "n_test_tasks": len(test_tasks.tasks),
                      "holdout_classes": cfg.holdout_classes,
                      "eval_warnings": result.n_warnings}))
    require(len(rows) > 0, "no embedding model found to evaluate")
    report_json = out / ARTIFACTS["report_json"]
    report_csv = out / ARTIFACTS["report_csv"]
    report_json.write_text(reports_to_json(rows, extra={"seed": cfg.seed}),
                           encoding="utf-8")
    report_csv.write_text(reports_to_csv(rows), encoding="utf-8")
    _manifest(out, "eval", args, cfg, inputs=inputs,
              outputs=[report_json, report_csv], t0=t0)
    for row in rows:
        print(f"{row.variant}: accuracy {row.accuracy_mean:.4f} +/- {row.accuracy_ci95:.4f}")
    return 0


def _tightness_payload(report: TightnessReport) -> dict:
    return {
        "checkpoints": [{"rhs": rhs, "gap": gap} for rhs, gap in report.checkpoints],
        "thresholds_reached": {repr(k): v for k, v in report.thresholds_reached.items()},
        "bound_held": report.bound_held,
        "final_rhs": report.final_rhs,
        "final_gap": report.final_gap,
    }


def cmd_verify_bounds(args) -> int:
    cfg, out = _resolve(args)
    t0 = time.perf_counter()
    base = cfg.stage_seed("verify")
    bound_rows = []
    for i in range(cfg.verify_bound_instances):
        clf, model, query_sets = random_bound_instance(base + i)
        check = verify_upper_bound(clf, model, query_sets)
        bound_rows.append({"instance_seed": base + i, "lhs": check.lhs, "rhs": check.rhs,
                           "gap": check.gap, "pass": check.passed})
    lemma_rows = []
    for i in range(cfg.verify_lemma_instances):
        clf, model, meta = random_episodic_instance(base + 10_000 + i)
        check = verify_lemma_equality(clf, model, meta)
        lemma_rows.append({"instance_seed": base + 10_000 + i, "lhs": check.lhs,
                           "rhs": check.rhs, "max_abs_diff": check.max_abs_diff,
                           "pass": check.passed})

    from .embedding import TrainConfig

    meta = separable_episodic_instance(seed=base)
    tightness = verify_tightness(
        meta, arch="linear", out_dim=8,
        train=TrainConfig(lr=0.1, epochs=cfg.verify_tightness_epochs, batch_size=512,
                          weight_decay=0.0, seed=base + 2))

    payload = {
        "bound": bound_rows,
        "lemma": lemma_rows,
        "tightness": _tightness_payload(tightness),
        "all_passed": (all(r["pass"] for r in bound_rows)
                       and all(r["pass"] for r in lemma_rows)
                       and tightness.bound_held),
    }
    verification_path = out / ARTIFACTS["verification"]
    verification_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                                 encoding="utf-8")
    _manifest(out, "verify-bounds", args, cfg, outputs=[verification_path], t0=t0,
              extra={"all_passed": payload["all_passed"]})
    print(f"bound: {sum(r['pass'] for r in bound_rows)}/{len(bound_rows)} passed; "
          f"lemma: {sum(r['pass'] for r in lemma_rows)}/{len(lemma_rows)} passed; "
          f"tightness bound_held={tightness.bound_held} "
          f"final_rhs={tightness.final_rhs:.2e}")
    return 0 if payload["all_passed"] else 2


def cmd_sweep(args) -> int:
    cfg, out = _resolve(args)
    t0 = time.perf_counter()
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad --values: {exc}") from exc
    require(len(values) > 0, "--values must list at least one number")
    rows = sweep_parameter(cfg, args.param, values)
    sweep_json = out / ARTIFACTS["sweep_json"]
    sweep_csv = out / ARTIFACTS["sweep_csv"]
    sweep_json.write_text(reports_to_json(rows, extra={"param": args.param}),
                          encoding="utf-8")
    lines = ["param,value,n_clusters,clustering_accuracy,percent_clustered,"
             "accuracy_mean,accuracy_ci95"]
    for row in rows:
        lines.append(",".join([
            args.param,
            repr(row.metadata["value"]),
            "" if row.n_clusters is None else str(row.n_clusters),
            "" if row.clustering_accuracy is None else repr(row.clustering_accuracy),
            "" if row.percent_clustered is None else repr(row.percent_clustered),
            repr(row.accuracy_mean),
            repr(row.accuracy_ci95),
        ]))
    sweep_csv.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _manifest(out, "sweep", args, cfg, outputs=[sweep_json, sweep_csv], t0=t0,
              extra={"param": args.param, "values": values})
    print(f"wrote {sweep_csv} ({len(rows)} rows)")
    return 0


_COMMANDS = {
    "gen-tasks": cmd_gen_tasks,
    "train-embed": cmd_train_embed,
    "infer-labels": cmd_infer_labels,
    "pretrain": cmd_pretrain,
    "eval": cmd_eval,
    "verify-bounds": cmd_verify_bounds,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except PipelineContractError as exc:
        print(f"pipeline contract violation: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
