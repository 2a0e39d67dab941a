import json
from pathlib import Path

import pytest

from cgssl import storage
from cgssl.cli import cli_main

MICRO = {
    "seed": 3,
    "num_seeds": 1,
    "num_iterations": 1,
    "k_synth": 16,
    "dataset": {"name": "toy", "num_classes": 4, "per_class": 20, "image_size": 16,
                "test_per_class": 10, "data_seed": 77},
    "supervised": {"max_steps": 30, "batch_size": 16, "eval_interval": 15},
    "vae": {"latent_dim": 8, "epochs": 4, "batch_size": 16, "pretrain_steps": 20},
    "mixmatch": {"beta": 5.0, "max_steps": 30, "batch_size": 16, "eval_interval": 15},
}


@pytest.fixture(scope="module")
def micro_cfg_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "micro.json"
    path.write_text(json.dumps(MICRO))
    return str(path)


@pytest.fixture(scope="module")
def finished_run(micro_cfg_path, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("cli-run")
    assert cli_main(["run", "--config", micro_cfg_path, "--run-dir", str(run_dir)]) == 0
    return run_dir


class TestHappyPath:
    def test_run_populates_directory(self, finished_run):
        for rel in ("config.json", "report.json", "checkpoints/baseline.npz",
                    "history/mixmatch_iter1.jsonl"):
            assert (finished_run / rel).exists()

    def test_stagewise_flow(self, micro_cfg_path, tmp_path):
        run_dir = str(tmp_path / "stages")
        for cmd in ("split", "train-supervised", "filter", "train-vae", "generate",
                    "train-mixmatch", "grid"):
            assert cli_main([cmd, "--config", micro_cfg_path, "--run-dir", run_dir]) == 0, cmd
        assert (Path(run_dir) / "grids" / "seed_vs_rec.png").exists()

    def test_trace_flag(self, micro_cfg_path, tmp_path, finished_run):
        import shutil

        run_dir = tmp_path / "trace-run"
        shutil.copytree(finished_run, run_dir)
        assert cli_main(["train-mixmatch", "--config", micro_cfg_path, "--run-dir",
                         str(run_dir), "--trace"]) == 0
        trace = storage.read_json(run_dir / "mixmatch_trace.json")
        assert {"labeled_inputs", "unlabeled_inputs", "guessed_labels", "lambdas",
                "labeled_targets_mixed", "unlabeled_targets_mixed"} <= set(trace)


class TestFailureModes:
    def test_filter_without_checkpoint_names_it(self, micro_cfg_path, tmp_path, capsys):
        run_dir = str(tmp_path / "nocp")
        assert cli_main(["split", "--config", micro_cfg_path, "--run-dir", run_dir]) == 0
        assert cli_main(["filter", "--config", micro_cfg_path, "--run-dir", run_dir]) == 1
        err = capsys.readouterr().err
        assert "baseline.npz" in err

    def test_unknown_subcommand_is_usage_error(self):
        assert cli_main(["frobnicate"]) == 2

    def test_unknown_flag_is_usage_error(self, micro_cfg_path):
        assert cli_main(["run", "--config", micro_cfg_path, "--bogus"]) == 2

    def test_unknown_override_key(self, micro_cfg_path, tmp_path):
        assert cli_main(["run", "--config", micro_cfg_path, "--run-dir", str(tmp_path),
                         "--set", "mixmatch.bogus=1"]) == 1

    def test_missing_config(self, tmp_path):
        assert cli_main(["run", "--config", str(tmp_path / "none.json")]) == 1


class TestReportCommand:
    def test_report_matches_persisted_json(self, micro_cfg_path, finished_run, capsys):
        assert cli_main(["report", "--config", micro_cfg_path, "--run-dir", str(finished_run)]) == 0
        out = capsys.readouterr().out
        report = storage.read_json(finished_run / "report.json")
        for stage in report["stages"]:
            assert stage["stage"] in out
            assert f"{stage['test_accuracy_mean']:.4f}" in out

    def test_report_is_read_only(self, micro_cfg_path, finished_run):
        before = storage.dir_checksum(finished_run)
        assert cli_main(["report", "--config", micro_cfg_path, "--run-dir", str(finished_run)]) == 0
        assert storage.dir_checksum(finished_run) == before


class TestConfigPlumbing:
    def test_override_round_trip(self, micro_cfg_path, tmp_path):
        run_dir = tmp_path / "ovr"
        assert cli_main(["split", "--config", micro_cfg_path, "--run-dir", str(run_dir),
                         "--set", "mixmatch.beta=42.5", "--set", "split.stratify=true"]) == 0
        persisted = storage.read_json(run_dir / "config.json")
        assert persisted["mixmatch"]["beta"] == 42.5
        assert persisted["split"]["stratify"] is True

    def test_seed_flag_overrides_config(self, micro_cfg_path, tmp_path):
        run_dir = tmp_path / "seed"
        assert cli_main(["split", "--config", micro_cfg_path, "--run-dir", str(run_dir),
                         "--seed", "17"]) == 0
        assert storage.read_json(run_dir / "config.json")["seed"] == 17

    def test_env_run_dir_fallback(self, micro_cfg_path, tmp_path, monkeypatch):
        target = tmp_path / "from-env"
        monkeypatch.setenv("CGSSL_RUN_DIR", str(target))
        assert cli_main(["split", "--config", micro_cfg_path]) == 0
        assert (target / "splits" / "manifest.json").exists()

    def test_bundled_configs_load(self):
        from cgssl.config import load_config_file

        for name in ("toy.json", "stl10_full.json", "cifar100_full.json"):
            cfg = load_config_file(name)
            assert cfg["schema_version"] == storage.SCHEMA_VERSION


class TestDeterminism:
    """Two invocations with identical config and seed: byte-identical
    metric histories and manifests."""

    def _drive(self, micro_cfg_path, run_dir):
        for cmd in ("split", "train-supervised", "filter", "train-vae", "generate",
                    "train-mixmatch"):
            assert cli_main([cmd, "--config", micro_cfg_path, "--run-dir", str(run_dir)]) == 0

    def test_stage_subcommands_byte_identical(self, micro_cfg_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        self._drive(micro_cfg_path, a)
        self._drive(micro_cfg_path, b)
        for rel in ("splits/manifest.json", "history/supervised.jsonl", "filter_report.json",
                    "augmented/rec/manifest.json", "augmented/synth/manifest.json",
                    "history/mixmatch_iter1.jsonl", "config.json"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
        # checkpoints and image files are deterministic as well
        for rel in ("checkpoints/baseline.npz", "checkpoints/vae_iter1.npz",
                    "augmented/rec/data.npz", "splits/d_l.npz"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
