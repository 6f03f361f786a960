import json
import os
from pathlib import Path

import numpy as np
import pytest

from consistency_lab.cli import main
from consistency_lab.config import (
    RunConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
)
from consistency_lab.errors import ConfigError
from consistency_lab.experiments import EXIT_CONFIG, EXIT_THRESHOLD, run
from consistency_lab.runtime import parallel_map, worker_count
from consistency_lab.svgplot import PlotUsageError, emit_plot


class TestConfig:
    def test_defaults_parse(self):
        cfg = load_config(None)
        assert cfg.schedule.t0 == 0.01 and cfg.schedule.T == 5.0
        assert cfg.mixture.dim == 1 and cfg.mixture.n_components == 2

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match=r"solver\.stepz"):
            config_from_dict({"solver": {"stepz": 4}})

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="wat"):
            config_from_dict({"wat": 1})

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="unknown experiment"):
            config_from_dict({"experiment": "verify-everything"})

    def test_full_file_roundtrip(self, tmp_path):
        doc = """
experiment = "verify-fpe"
seed = 11
output_dir = "results"

[schedule]
form = "linear-sigma"
t0 = 0.02
T = 4.0

[mixture]
weights = [0.25, 0.75]
means = [[-2.0], [1.0]]
variances = [[0.5], [0.4]]

[solver]
n_steps = 128
method = "heun"
lambda = 0.5

[verify]
t_list = [0.5, 1.0]
n_points = 10
"""
        path = tmp_path / "cfg.toml"
        path.write_text(doc)
        cfg = load_config(path)
        assert cfg.experiment == "verify-fpe"
        assert cfg.seed == 11
        assert cfg.schedule.t0 == 0.02
        assert cfg.solver.lam == 0.5
        assert cfg.mixture.weights.tolist() == [0.25, 0.75]
        assert cfg.verify.t_list == (0.5, 1.0)

    def test_bad_value_reported(self):
        with pytest.raises(ConfigError, match="invalid config value"):
            config_from_dict({"schedule": {"t0": "soon"}})

    def test_eps_grid_includes_zero_and_max(self):
        cfg = RunConfig()
        grid = cfg.eps_grid()
        assert grid[0] == 0.0 and grid[-1] == 0.3 and len(grid) == 16

    def test_hash_stable_and_sensitive(self):
        a = config_hash(load_config(None))
        b = config_hash(load_config(None))
        cfg = load_config(None)
        cfg.seed = 123
        c = config_hash(cfg)
        assert a == b and a != c

    def test_echo_contains_required_keys(self):
        echo = config_to_dict(load_config(None))
        assert echo["schedule"]["form"] == "linear-sigma"
        assert "lambda" in echo["solver"]
        assert echo["mixture"]["weights"] == [0.5, 0.5]


class TestCli:
    def test_thm41_passes_and_is_deterministic(self, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        assert main(["verify-thm41", "--out", str(out1), "--seed", "5"]) == 0
        assert main(["verify-thm41", "--out", str(out2), "--seed", "5"]) == 0
        for name in ("report.json", "metrics.csv", "variance_vs_lambda.svg",
                     "variance_vs_lambda.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        report = json.loads((out1 / "report.json").read_text())
        assert report["passed"] is True
        assert report["equality_discrepancy"] <= 1e-12

    def test_manifest_echoes_config(self, tmp_path):
        out = tmp_path / "m"
        assert main(["verify-drift", "--out", str(out), "--seed", "2"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["experiment"] == "verify-drift"
        assert manifest["seed"] == 2
        assert manifest["config"]["solver"]["n_steps"] == 400
        assert "timestamp_utc" in manifest

    def test_unknown_key_exit_code(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[solver]\nstepz = 4\n")
        assert main(["verify-thm41", "--config", str(bad)]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["verify-thm41", "--config", str(tmp_path / "none.toml")]) == EXIT_CONFIG

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text('seed = 1\noutput_dir = "unused"\n')
        out = tmp_path / "flag-out"
        assert main(["verify-drift", "--config", str(cfg), "--out", str(out),
                     "--seed", "3"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 3

    def test_train_eval_sample_pipeline(self, tmp_path):
        cfg = tmp_path / "train.toml"
        cfg.write_text('[training]\nmethod = "dsm"\nsteps = 15\nbatch_size = 16\n')
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "checkpoint.json").exists()
        assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert "score_mse" in report and "sliced_wasserstein" in report
        assert main(["sample", "--config", str(cfg), "--out", str(out)]) == 0
        data = np.loadtxt(out / "samples.csv", delimiter=",", skiprows=1)
        assert data.shape[0] == 4096

    def test_threshold_failure_exit_code(self, tmp_path, monkeypatch):
        # an impossibly tight gap threshold forces a verification failure
        cfg = tmp_path / "cfg.toml"
        cfg.write_text(
            "[verify]\nn_paths = 200\ngap_threshold = 1e-12\n\n"
            "[solver]\nn_steps = 50\n"
        )
        out = tmp_path / "fail"
        assert main(["verify-martingale", "--config", str(cfg),
                     "--out", str(out)]) == EXIT_THRESHOLD
        report = json.loads((out / "report.json").read_text())
        assert report["passed"] is False


class TestSvgPlot:
    def test_line_plot_with_sidecar(self, tmp_path):
        path = tmp_path / "plot.svg"
        emit_plot(
            [{"label": "a", "x": [0, 1, 2], "y": [0.0, 1.0, 4.0]}],
            path, title="t", xlabel="x", ylabel="y",
        )
        text = path.read_text()
        assert text.startswith("<svg") and "polyline" in text and "legend" not in text
        sidecar = (tmp_path / "plot.csv").read_text().strip().splitlines()
        assert sidecar[0] == "label,x,y"
        assert len(sidecar) == 4

    def test_single_point_marker(self, tmp_path):
        path = tmp_path / "pt.svg"
        emit_plot([{"label": "p", "x": [1.0], "y": [2.0]}], path)
        assert "circle" in path.read_text()

    def test_empty_requires_flag(self, tmp_path):
        with pytest.raises(PlotUsageError):
            emit_plot([], tmp_path / "no.svg")
        emit_plot([], tmp_path / "ok.svg", allow_empty=True)
        assert (tmp_path / "ok.svg").exists()

    def test_deterministic_bytes(self, tmp_path):
        s = [{"label": "a", "x": [0.1, 0.2], "y": [3.0, 1.0]}]
        emit_plot(s, tmp_path / "one.svg")
        emit_plot(s, tmp_path / "two.svg")
        assert (tmp_path / "one.svg").read_bytes() == (tmp_path / "two.svg").read_bytes()

    def test_log_scale_rejects_nonpositive(self, tmp_path):
        with pytest.raises(ValueError, match="positive"):
            emit_plot([{"label": "a", "x": [0], "y": [0.0]}], tmp_path / "l.svg", logy=True)


class TestRuntime:
    def test_env_var_caps_workers(self, monkeypatch):
        monkeypatch.setenv("CONSISTENCY_LAB_THREADS", "1")
        assert worker_count() == 1
        monkeypatch.setenv("CONSISTENCY_LAB_THREADS", "notanum")
        with pytest.raises(ValueError):
            worker_count()

    def test_parallel_map_preserves_order(self, monkeypatch):
        monkeypatch.setenv("CONSISTENCY_LAB_THREADS", "4")
        out = parallel_map(lambda v: v * v, range(20))
        assert out == [v * v for v in range(20)]

    def test_results_independent_of_worker_count(self, monkeypatch):
        monkeypatch.setenv("CONSISTENCY_LAB_THREADS", "1")
        a = parallel_map(lambda v: v + 1, range(10))
        monkeypatch.setenv("CONSISTENCY_LAB_THREADS", "8")
        b = parallel_map(lambda v: v + 1, range(10))
        assert a == b
