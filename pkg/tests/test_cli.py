import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qcover import cli
from qcover import datapipe as dp

SMALL = {
    "data": {"n_samples": 600},
    "train": {"epochs": 3, "eval_every": 1},
    "sweep": {"sizes": [100, 200], "repeats": 2, "lams": [0, 0.05]},
    "analysis": {"n_draws": 5, "fim_samples": 40, "n_walkers": 2},
}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, *args, cfg=None, out="out"):
    argv = list(args) + ["--out-dir", str(tmp_path / out)]
    if cfg is not None:
        argv += ["--config", write_config(tmp_path / f"cfg_{out}.json", cfg)]
    return cli.main(argv)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def without_timing(path):
    doc = json.loads(path.read_text())
    doc.pop("timing", None)
    return doc


class TestConfig:
    def test_defaults_round_trip(self, capsys):
        assert cli.main(["show-config"]) == 0
        assert json.loads(capsys.readouterr().out) == cli.load_config(None)

    def test_unknown_key(self, tmp_path):
        assert run(tmp_path, "show-config", cfg={"train": {"epoch": 3}}) == cli.EXIT_CONFIG

    def test_unknown_section(self, tmp_path):
        assert run(tmp_path, "show-config", cfg={"trainig": {}}) == cli.EXIT_CONFIG

    def test_seed_precedence(self, tmp_path, monkeypatch):
        path = write_config(tmp_path / "c.json", {"seed": 5})
        assert cli.load_config(path)["seed"] == 5
        monkeypatch.setenv("QCOVER_SEED", "9")
        assert cli.load_config(path)["seed"] == 9
        assert cli.load_config(path, seed_flag=11)["seed"] == 11

    def test_bad_env_seed(self, monkeypatch, tmp_path):
        monkeypatch.setenv("QCOVER_SEED", "abc")
        assert run(tmp_path, "show-config") == cli.EXIT_CONFIG

    def test_malformed_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{")
        assert cli.main(["show-config", "--config", str(tmp_path / "bad.json")]) == cli.EXIT_CONFIG

    def test_feature_width_mismatch(self, tmp_path):
        cfg = {**SMALL, "model": {"n_qubits": 8}}
        assert run(tmp_path, "train", cfg=cfg) == cli.EXIT_CONFIG


class TestGenerateData:
    def test_outputs(self, tmp_path, capsys):
        assert run(tmp_path, "generate-data", cfg=SMALL) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "samples: 600"
        assert len(lines) == 2 + 100
        hist = read_csv(tmp_path / "out" / "data_histogram.csv")
        assert len(hist) == 100 and sum(int(r["count"]) for r in hist) == 600
        assert {"config_hash", "seed"} <= set(hist[0])
        assert len(dp.load_csv(tmp_path / "out" / "data.csv")) == 600

    def test_seed_determinism(self, tmp_path):
        for out in ("a", "b"):
            assert run(tmp_path, "generate-data", "--seed", "3", cfg=SMALL, out=out) == 0
        for name in ("data.csv", "data_histogram.csv", "data.manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_env_seed_changes_data(self, tmp_path, monkeypatch):
        assert run(tmp_path, "generate-data", cfg=SMALL, out="a") == 0
        monkeypatch.setenv("QCOVER_SEED", "1")
        assert run(tmp_path, "generate-data", cfg=SMALL, out="b") == 0
        assert (tmp_path / "a" / "data.csv").read_bytes() != (tmp_path / "b" / "data.csv").read_bytes()
        assert json.loads((tmp_path / "b" / "data.manifest.json").read_text())["seed"] == 1

    def test_empty_dataset_warns(self, tmp_path):
        with pytest.warns(RuntimeWarning):
            assert run(tmp_path, "generate-data", cfg={"data": {"n_samples": 0}}) == 0
        assert (tmp_path / "out" / "data.csv").read_text().strip() == ",".join(dp.COLUMNS)

    def test_refuses_overwrite(self, tmp_path):
        assert run(tmp_path, "generate-data", cfg=SMALL) == 0
        assert run(tmp_path, "generate-data", cfg=SMALL) == cli.EXIT_CONFIG
        assert run(tmp_path, "generate-data", "--overwrite", cfg=SMALL) == 0


class TestFitBaseline:
    def test_planted_recovery(self, tmp_path):
        assert run(tmp_path, "fit-baseline", cfg={"data": {"n_samples": 3000}}) == 0
        doc = json.loads((tmp_path / "out" / "baseline.json").read_text())
        assert abs(doc["alpha"] / dp.XU_RANDALL_ALPHA - 1) <= 0.05
        assert abs(doc["beta"] / dp.XU_RANDALL_BETA - 1) <= 0.05
        assert doc["test"]["n"] == 500 and doc["test"]["r2"] > 0.99 and "mse" in doc["test"]

    def test_reads_generated_file(self, tmp_path):
        assert run(tmp_path, "generate-data", cfg=SMALL) == 0
        assert run(tmp_path, "fit-baseline", cfg={"data": {"path": "data.csv"}}) == 0

    def test_refuses_without_clc(self, tmp_path):
        (tmp_path / "out").mkdir()
        raw = dp.generate_synthetic(20, 0)
        cols = [c for c in dp.COLUMNS if c != "clc"]
        rows = np.column_stack([raw.columns[c] for c in cols])
        np.savetxt(tmp_path / "out" / "d.csv", rows, delimiter=",", header=",".join(cols), comments="")
        assert run(tmp_path, "fit-baseline", cfg={"data": {"path": "d.csv"}}) == cli.EXIT_DATA

    def test_missing_file(self, tmp_path):
        assert run(tmp_path, "fit-baseline", cfg={"data": {"path": "nope.csv"}}) == cli.EXIT_DATA


class TestTrain:
    def test_reproducible_payloads(self, tmp_path):
        for out in ("a", "b"):
            assert run(tmp_path, "train", cfg=SMALL, out=out) == 0
        assert (tmp_path / "a" / "run.jsonl").read_bytes() == (tmp_path / "b" / "run.jsonl").read_bytes()
        assert without_timing(tmp_path / "a" / "run.manifest.json") == \
            without_timing(tmp_path / "b" / "run.manifest.json")

    def test_mpv_trace_when_regularized(self, tmp_path):
        cfg = {**SMALL, "train": {"epochs": 2, "lam": 0.01, "eval_every": 1}}
        assert run(tmp_path, "train", cfg=cfg) == 0
        rows = [json.loads(line) for line in (tmp_path / "out" / "run.jsonl").read_text().splitlines()]
        assert all(r["train_mpv"] is not None and r["train_mpv"] >= 0 for r in rows)
        assert all(r["config_hash"] and r["seed"] == 0 for r in rows)

    def test_shot_mode_manifest(self, tmp_path):
        cfg = {**SMALL, "train": {"epochs": 1, "n_shots": 50}}
        assert run(tmp_path, "train", cfg=cfg) == 0
        doc = json.loads((tmp_path / "out" / "run.manifest.json").read_text())
        assert doc["n_shots"] == 50 and doc["status"] == "ok" and doc["reproducibility"] == "bitwise"

    def test_mlp(self, tmp_path):
        cfg = {**SMALL, "model": {"family": "mlp"}}
        assert run(tmp_path, "train", cfg=cfg) == 0

    def test_divergence_exit_code(self, tmp_path):
        cfg = {**SMALL, "model": {"family": "mlp", "layer_sizes": [6, 1]},
               "train": {"epochs": 30, "learning_rate": 1e3, "divergence_factor": 10, "divergence_patience": 2}}
        assert run(tmp_path, "train", cfg=cfg) == cli.EXIT_DIVERGENCE
        assert json.loads((tmp_path / "out" / "run.manifest.json").read_text())["status"] == "diverged"


class TestSweep:
    def test_train_size_rows(self, tmp_path):
        cfg = {**SMALL, "model": {"family": "mlp"}}
        assert run(tmp_path, "sweep", "train_size", cfg=cfg) == 0
        runs = read_csv(tmp_path / "out" / "sweep_train_size_runs.csv")
        summary = read_csv(tmp_path / "out" / "sweep_train_size.csv")
        assert len(runs) == 2 * 2 and len(summary) == 2
        for row in summary:
            assert float(row["test_mse_min"]) <= float(row["test_mse_mean"]) <= float(row["test_mse_max"])

    def test_shots_non_increasing(self, tmp_path):
        cfg = {"data": {"n_samples": 1200}, "model": {"n_enc": 1, "n_var": 2},
               "train": {"epochs": 5, "learning_rate": 0.01}, "sweep": {"repeats": 10}}
        assert run(tmp_path, "sweep", "shots", cfg=cfg) == 0
        summary = read_csv(tmp_path / "out" / "sweep_shots.csv")
        assert [int(r["n_shots"]) for r in summary] == [100, 1000, 10000]
        means = [float(r["test_mse_mean"]) for r in summary]
        assert means[0] >= means[1] >= means[2] >= float(summary[0]["exact_test_mse"]) - 1e-3
        assert len(read_csv(tmp_path / "out" / "sweep_shots_runs.csv")) == 30

    def test_shots_reuses_trained_params(self, tmp_path):
        assert run(tmp_path, "train", cfg=SMALL) == 0
        cfg = {**SMALL, "analysis": {"params": "run.manifest.json"}}
        assert run(tmp_path, "sweep", "shots", cfg=cfg) == 0

    def test_lambda_pairs(self, tmp_path):
        cfg = {**SMALL, "model": {"n_enc": 1, "n_var": 1}, "sweep": {"lams": [0, 0.05], "repeats": 1}}
        assert run(tmp_path, "sweep", "lambda", cfg=cfg) == 0
        rows = read_csv(tmp_path / "out" / "sweep_lambda.csv")
        assert [float(r["lam"]) for r in rows] == [0, 0.05]
        assert all(float(r["test_mpv_mean"]) >= 0 for r in rows)

    def test_mlp_shots_rejected(self, tmp_path):
        assert run(tmp_path, "sweep", "shots", cfg={**SMALL, "model": {"family": "mlp"}}) == cli.EXIT_CONFIG


class TestAnalyze:
    def test_evaluate_twice_identical(self, tmp_path):
        assert run(tmp_path, "train", cfg=SMALL) == 0
        cfg = {**SMALL, "analysis": {"params": "run.manifest.json"}}
        assert run(tmp_path, "analyze", "evaluate", cfg=cfg) == 0
        first = (tmp_path / "out" / "evaluate.json").read_bytes()
        assert run(tmp_path, "analyze", "evaluate", "--overwrite", cfg=cfg) == 0
        assert (tmp_path / "out" / "evaluate.json").read_bytes() == first
        doc = json.loads(first)
        assert set(doc["clc_scale"]) == {"mse", "r2", "hellinger", "wasserstein"}
        assert len(read_csv(tmp_path / "out" / "evaluate_histogram.csv")) == 100

    def test_params_for_other_model_rejected(self, tmp_path):
        assert run(tmp_path, "train", cfg=SMALL) == 0
        cfg = {**SMALL, "model": {"n_var": 1}, "analysis": {"params": "run.manifest.json"}}
        assert run(tmp_path, "analyze", "evaluate", cfg=cfg) == cli.EXIT_CONFIG

    def test_fim_both_spectra(self, tmp_path):
        assert run(tmp_path, "analyze", "fim", cfg=SMALL) == 0
        rows = read_csv(tmp_path / "out" / "fim_spectra.csv")
        by_model = {m: [r for r in rows if r["model"] == m] for m in ("primary", "compare")}
        assert len(by_model["primary"]) == 5 * 114 and len(by_model["compare"]) == 5 * 119
        doc = json.loads((tmp_path / "out" / "fim_report.json").read_text())
        assert doc["shared_ensemble"] and all(0 <= r["effective_dimension"] <= 1 for r in doc["results"].values())

    def test_dynamics(self, tmp_path):
        cfg = {**SMALL, "train": {"epochs": 2, "snapshot_every": 2}}
        assert run(tmp_path, "analyze", "dynamics", cfg=cfg) == 0
        msd = read_csv(tmp_path / "out" / "dynamics_msd.csv")
        assert float(msd[0]["msd"]) == 0 and len(msd) == 1 + 2 * (500 // 100) // 2
        assert len(read_csv(tmp_path / "out" / "dynamics_losses.csv")) == 2 * 2

    def test_dynamics_needs_two_walkers(self, tmp_path):
        cfg = {**SMALL, "analysis": {"n_walkers": 1}}
        assert run(tmp_path, "analyze", "dynamics", cfg=cfg) == cli.EXIT_CONFIG


def test_module_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "qcover", "generate-data", "--out-dir", str(tmp_path),
                           "--config", write_config(tmp_path / "c.json", {"data": {"n_samples": 10}})],
                          capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.startswith("samples: 10")
