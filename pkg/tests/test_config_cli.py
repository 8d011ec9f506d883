import json

import pytest

from metalabel import ValidationError
from metalabel.cli import main
from metalabel.config import default_config, load_config


SMALL_CONFIG = """\
# smoke configuration
run.seed = 7
world.classes = 10
world.holdout_classes = 5
world.dim = 12
world.separation = 5.0
world.samples_per_class = 80
tasks.count = 100
embed.arch = linear
embed.out_dim = 8
train.epochs = 6
pretrain.epochs = 10
labeler.j_init = 30
prune.q = 3.0
eval.n_test_tasks = 40
eval.logreg_tol = 1e-3
verify.bound_instances = 10
verify.lemma_instances = 5
verify.tightness_epochs = 150
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL_CONFIG)
    return path


class TestConfigParsing:
    def test_defaults_carry_reference_regularizers(self):
        cfg = default_config()
        assert cfg.ridge_lam == 1e-3
        assert cfg.logreg_lam == 1.0

    def test_overrides_and_comments(self, config_file):
        cfg = load_config(config_file)
        assert cfg.seed == 7
        assert cfg.world_classes == 10
        assert cfg.train_epochs == 6
        assert cfg.replacement is True

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("world.classez = 10\n")
        with pytest.raises(ValidationError, match="world.classez"):
            load_config(path)

    def test_bad_value_names_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("run.seed = 7\nworld.classes = ten\n")
        with pytest.raises(ValidationError, match="bad.cfg:2"):
            load_config(path)

    def test_out_dir_resolved_relative_to_config(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("run.out = results/exp\n")
        cfg = load_config(path)
        assert cfg.out_dir == str((tmp_path / "results/exp").resolve())

    def test_stage_seeds_are_distinct(self):
        cfg = default_config()
        seeds = [cfg.stage_seed(s) for s in
                 ("world", "tasks", "embed", "labels", "pretrain", "test_tasks")]
        assert len(set(seeds)) == len(seeds)


class TestCliPipeline:
    def run_stage(self, command, config_file, out, extra=()):
        return main([command, "--config", str(config_file), "--out", str(out), *extra])

    def test_full_chain_and_artifacts(self, config_file, tmp_path):
        out = tmp_path / "run"
        for command in ("gen-tasks", "train-embed", "infer-labels", "pretrain", "eval"):
            assert self.run_stage(command, config_file, out) == 0
        for artifact in ("tasks.jsonl", "test_tasks.jsonl", "embed0.model",
                         "clusters.json", "labels.jsonl", "embed_star.model",
                         "report.json", "report.csv"):
            assert (out / artifact).exists()
        for stage in ("gen-tasks", "train-embed", "infer-labels", "pretrain", "eval"):
            manifest = json.loads((out / f"{stage}.manifest.json").read_text())
            assert manifest["seed"] == 7
            assert manifest["wall_time_s"] >= 0
            assert manifest["config"]["sha256"]
        report = json.loads((out / "report.json").read_text())
        assert {row["variant"] for row in report["rows"]} == {"initial_embedding",
                                                              "pretrained"}

    def test_hide_global_gives_identical_labeling(self, config_file, tmp_path):
        plain = tmp_path / "plain"
        hidden = tmp_path / "hidden"
        for out, extra in ((plain, ()), (hidden, ("--hide-global",))):
            assert self.run_stage("gen-tasks", config_file, out) == 0
            assert self.run_stage("train-embed", config_file, out, extra) == 0
            assert self.run_stage("infer-labels", config_file, out, extra) == 0
        assert (plain / "clusters.json").read_bytes() == \
            (hidden / "clusters.json").read_bytes()
        assert (plain / "labels.jsonl").read_bytes() == \
            (hidden / "labels.jsonl").read_bytes()
        manifest = json.loads((hidden / "infer-labels.manifest.json").read_text())
        assert manifest["y_true_visible"] is False

    def test_sweep_csv_shape(self, config_file, tmp_path):
        out = tmp_path / "sweep"
        code = main(["sweep", "--config", str(config_file), "--out", str(out),
                     "--param", "q", "--values", "2,3"])
        assert code == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert lines[0] == ("param,value,n_clusters,clustering_accuracy,"
                            "percent_clustered,accuracy_mean,accuracy_ci95")
        assert len(lines) == 3
        assert lines[1].startswith("q,2.0,")

    def test_verify_bounds_passes(self, config_file, tmp_path):
        out = tmp_path / "verify"
        assert main(["verify-bounds", "--config", str(config_file),
                     "--out", str(out)]) == 0
        payload = json.loads((out / "verification.json").read_text())
        assert payload["all_passed"] is True
        assert len(payload["bound"]) == 10
        assert all(row["pass"] for row in payload["bound"])
        assert all(row["pass"] for row in payload["lemma"])

    def test_exit_codes(self, tmp_path, config_file):
        bad = tmp_path / "bad.cfg"
        bad.write_text("nonsense.key = 1\n")
        assert main(["gen-tasks", "--config", str(bad),
                     "--out", str(tmp_path / "x")]) == 1
        # pruning everything below the mean collapses the state: contract violation
        aggressive = tmp_path / "aggressive.cfg"
        aggressive.write_text(SMALL_CONFIG + "prune.q = 0.0\n")
        out = tmp_path / "collapse"
        assert main(["gen-tasks", "--config", str(aggressive),
                     "--out", str(out)]) == 0
        assert main(["train-embed", "--config", str(aggressive),
                     "--out", str(out)]) == 0
        assert main(["infer-labels", "--config", str(aggressive),
                     "--out", str(out)]) == 3
        # a wildly large learning rate diverges: numerical failure
        divergent = tmp_path / "divergent.cfg"
        divergent.write_text(SMALL_CONFIG + "train.lr = 1e12\n")
        out2 = tmp_path / "diverge"
        assert main(["gen-tasks", "--config", str(divergent),
                     "--out", str(out2)]) == 0
        assert main(["train-embed", "--config", str(divergent),
                     "--out", str(out2)]) == 2

    def test_missing_inputs_fail_validation(self, config_file, tmp_path):
        assert main(["eval", "--config", str(config_file),
                     "--out", str(tmp_path / "empty")]) == 1
