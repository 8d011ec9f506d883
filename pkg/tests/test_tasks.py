import json

import numpy as np
import pytest

from metalabel import (SyntheticWorldConfig, TaskSpec, ValidationError,
                       generate_world, load_tasks, sample_tasks, save_tasks,
                       validate_meta_set, validate_task)
from metalabel.tasks import max_tasks_without_replacement, place_class_means


def nearest_mean_accuracy(pool):
    """Brute-force oracle: classify every sample by the nearest empirical class mean."""
    classes = sorted({s.y_true for s in pool})
    means = np.asarray([np.mean([s.x for s in pool if s.y_true == c], axis=0)
                        for c in classes])
    correct = 0
    for s in pool:
        d2 = ((means - s.x) ** 2).sum(axis=1)
        correct += classes[int(np.argmin(d2))] == s.y_true
    return correct / len(pool)


class TestGenerateWorld:
    def test_single_class(self):
        pool = generate_world(SyntheticWorldConfig(n_classes=1, dim=4,
                                                   samples_per_class=3, seed=0))
        assert len(pool) == 3
        assert all(s.y_true == 0 for s in pool)

    def test_deterministic(self):
        cfg = SyntheticWorldConfig(n_classes=20, dim=16, separation=6.0,
                                   samples_per_class=10, seed=7)
        a = generate_world(cfg)
        b = generate_world(cfg)
        assert all(np.array_equal(x.x, y.x) and x.y_true == y.y_true
                   for x, y in zip(a, b))

    def test_nearest_mean_accuracy_on_separated_world(self):
        cfg = SyntheticWorldConfig(n_classes=20, dim=16, separation=6.0,
                                   samples_per_class=200, seed=3)
        assert nearest_mean_accuracy(generate_world(cfg)) >= 0.999

    def test_pairwise_separation_enforced(self):
        rng = np.random.default_rng(9)
        means = place_class_means(rng, 15, 8, 4.0)
        for i in range(15):
            for j in range(i + 1, 15):
                assert np.linalg.norm(means[i] - means[j]) >= 4.0

    def test_placement_failure_when_dim_too_small(self):
        with pytest.raises(ValidationError, match="retries exhausted"):
            place_class_means(np.random.default_rng(0), 500, 1, 1.0)


class TestSampleTasks:
    def test_exhausting_pool_in_one_task(self):
        pool = generate_world(SyntheticWorldConfig(n_classes=5, dim=4,
                                                   samples_per_class=20, seed=1))
        spec = TaskSpec(k=5, n_support=1, n_query=19)
        meta = sample_tasks(pool, spec, 1, replacement=False, seed=2)
        assert len(meta.tasks) == 1
        assert len(meta.tasks[0].support) + len(meta.tasks[0].query) == 100
        with pytest.raises(ValidationError, match="insufficient pool"):
            sample_tasks(pool, spec, 2, replacement=False, seed=2)

    def test_flat_pool_capacity_matches_benchmark_scale(self):
        # 38400 samples in 100-sample tasks admit at most 384 disjoint tasks
        spec = TaskSpec(k=5, n_support=5, n_query=15)
        assert max_tasks_without_replacement(38_400, spec) == 384
        pool = generate_world(SyntheticWorldConfig(n_classes=64, dim=4,
                                                   separation=4.0,
                                                   samples_per_class=600, seed=4))
        assert len(pool) == 38_400
        with pytest.raises(ValidationError, match="insufficient pool"):
            sample_tasks(pool, spec, 385, replacement=False, seed=5)

    def test_generated_tasks_satisfy_invariants(self):
        pool = generate_world(SyntheticWorldConfig(n_classes=8, dim=6,
                                                   samples_per_class=60, seed=6))
        spec = TaskSpec(k=4, n_support=2, n_query=5)
        for replacement in (True, False):
            meta = sample_tasks(pool, spec, 10, replacement=replacement, seed=7)
            validate_meta_set(meta)
            assert meta.replacement is replacement

    def test_no_replacement_never_repeats_inputs(self):
        pool = generate_world(SyntheticWorldConfig(n_classes=6, dim=5,
                                                   samples_per_class=40, seed=8))
        meta = sample_tasks(pool, TaskSpec(k=3, n_support=1, n_query=3), 12,
                            replacement=False, seed=9)
        seen = set()
        for task in meta.tasks:
            for s in task.all_samples():
                key = s.x.tobytes()
                assert key not in seen
                seen.add(key)

    def test_local_labels_carry_no_global_information(self):
        pool = generate_world(SyntheticWorldConfig(n_classes=4, dim=3,
                                                   samples_per_class=200, seed=10))
        meta = sample_tasks(pool, TaskSpec(k=2, n_support=1, n_query=1), 40,
                            replacement=True, seed=11)
        locals_of_class0 = {s.y_local for t in meta.tasks for s in t.all_samples()
                            if s.y_true == 0}
        assert locals_of_class0 == {0, 1}


class TestTaskValidation:
    def test_rejects_mixed_truth_within_group(self, tiny_meta):
        task = tiny_meta.tasks[0]
        task.query[-1].y_true = 99
        with pytest.raises(ValidationError, match="mixes ground-truth"):
            validate_task(task)

    def test_rejects_shared_truth_across_groups(self, tiny_meta):
        task = tiny_meta.tasks[0]
        for s in task.all_samples():
            s.y_true = 5
        with pytest.raises(ValidationError, match="share ground-truth"):
            validate_task(task)


class TestTaskFiles:
    def test_round_trip_identity(self, tmp_path, tiny_meta):
        path = tmp_path / "tasks.jsonl"
        save_tasks(tiny_meta, path)
        assert load_tasks(path) == tiny_meta

    def test_hide_global_strips_truth(self, tmp_path, tiny_meta):
        path = tmp_path / "tasks.jsonl"
        save_tasks(tiny_meta, path)
        meta = load_tasks(path, hide_global=True)
        assert all(s.y_true is None for t in meta.tasks for s in t.all_samples())

    def test_missing_y_local_names_line(self, tmp_path, tiny_meta):
        path = tmp_path / "tasks.jsonl"
        save_tasks(tiny_meta, path)
        lines = path.read_text().splitlines()
        record = json.loads(lines[1])
        del record["support"][0]["y_local"]
        lines[1] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValidationError, match="line 2.*y_local"):
            load_tasks(path)

    def test_mixed_dimension_names_line(self, tmp_path, tiny_meta):
        path = tmp_path / "tasks.jsonl"
        save_tasks(tiny_meta, path)
        lines = path.read_text().splitlines()
        record = json.loads(lines[2])
        for part in ("support", "query"):
            for s in record[part]:
                s["x"] = s["x"] + [0.0]
        lines[2] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValidationError, match="line 3.*dimension"):
            load_tasks(path)

    def test_headerless_file_is_accepted(self, tmp_path, tiny_meta):
        path = tmp_path / "tasks.jsonl"
        save_tasks(tiny_meta, path)
        body = path.read_text().splitlines()[1:]
        path.write_text("\n".join(body) + "\n")
        meta = load_tasks(path)
        assert meta.spec == tiny_meta.spec
        assert meta.tasks == tiny_meta.tasks

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "tasks.jsonl"
        path.write_text("not json\n")
        with pytest.raises(ValidationError, match="line 1"):
            load_tasks(path)
