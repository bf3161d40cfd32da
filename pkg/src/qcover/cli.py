"""Command-line front end: data generation, baseline fits, training, sweeps and analysis.

Every command reads one JSON config (see ``DEFAULT_CONFIG``), writes CSV/JSON
artifacts under ``--out-dir`` and stamps each of them with the config hash and
seed.  Exit codes: 0 success, 2 config error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import warnings
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, datapipe, training
from .circuits import ArchitectureSpec
from .classical_nn import MlpSpec
from .datapipe import DataError
from .training import DivergenceError, MlpModel, QnnModel, TrainConfig

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 2, 3, 4

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "path": None,              # CSV relative to --out-dir; None generates synthetic data
        "n_samples": 6000,
        "noise_sigma": 0.0,
        "features": list(datapipe.FEATURES_6),
        "test_fraction": 1 / 6,
        "alpha": datapipe.XU_RANDALL_ALPHA,
        "beta": datapipe.XU_RANDALL_BETA,
    },
    "model": {
        "family": "qnn",
        "kind": "ZZXY",
        "n_qubits": 6,
        "n_enc": 2,
        "n_var": 5,
        "hone_encoding": False,
        "layer_sizes": [6, 8, 3, 7, 1],
        "activations": None,
    },
    "train": {
        "learning_rate": 0.001,
        "batch_size": 100,
        "epochs": 150,
        "n_shots": None,
        "lam": 0.0,
        "lam_schedule": [],
        "mpv_shots": 1,
        "snapshot_every": 0,
        "eval_every": 10,
        "divergence_factor": 1e3,
        "divergence_patience": 3,
    },
    "sweep": {
        "sizes": [500, 1000, 2000, 5000],
        "shots": [100, 1000, 10000],
        "lams": [0.0, 1e-3, 5e-3, 1e-2, 5e-2],
        "repeats": 3,
    },
    "analysis": {
        "params": None,            # run manifest relative to --out-dir; None trains first
        "n_draws": 100,
        "n_data": 1e5,
        "fim_samples": 200,
        "compare": {"family": "mlp", "layer_sizes": [6, 8, 3, 7, 1]},
        "n_walkers": 4,
        "final_window": 25,
    },
}

_FREE_KEYS = {("analysis", "compare")}     # nested model sections, validated when used


class ConfigError(ValueError):
    pass


# --- config ---------------------------------------------------------------------------


def merge_config(user: dict, base: dict = DEFAULT_CONFIG, path: tuple = ()) -> dict:
    """Overlay ``user`` on ``base``; unknown keys are errors."""
    if not isinstance(user, dict):
        raise ConfigError(f"section {'.'.join(path) or '<root>'} must be an object")
    out = copy.deepcopy(base)
    for key, value in user.items():
        where = ".".join(path + (key,))
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict) and path + (key,) not in _FREE_KEYS:
            out[key] = merge_config(value, base[key], path + (key,))
        else:
            out[key] = value
    return out


def load_config(path, seed_flag=None) -> dict:
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = merge_config(user)
    env = os.environ.get("QCOVER_SEED")
    if env is not None:
        try:
            cfg["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"QCOVER_SEED must be an integer, got {env!r}") from None
    if seed_flag is not None:
        cfg["seed"] = seed_flag
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    return cfg


def build_model(section: dict, threads: int = 1):
    try:
        family = section.get("family", "qnn")
        if family == "qnn":
            spec = ArchitectureSpec(section["kind"], int(section["n_qubits"]), int(section["n_enc"]),
                                    int(section["n_var"]), bool(section.get("hone_encoding", False)))
            return QnnModel(spec, threads)
        if family == "mlp":
            acts = section.get("activations")
            return MlpModel(MlpSpec(tuple(section["layer_sizes"]), None if acts is None else tuple(acts)))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid model section: {exc}") from None
    raise ConfigError(f"model family must be 'qnn' or 'mlp', got {family!r}")


def model_width(model) -> int:
    return model.spec.n_qubits if model.family == "qnn" else model.spec.n_inputs


def build_train_config(cfg: dict, **overrides) -> TrainConfig:
    section = dict(cfg["train"])
    section["lam_schedule"] = tuple(section.get("lam_schedule") or ())
    known = {f.name for f in fields(TrainConfig)}
    try:
        tc = TrainConfig(seed=cfg["seed"], **{k: v for k, v in section.items() if k in known})
        return replace(tc, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train section: {exc}") from None


# --- data -----------------------------------------------------------------------------


def _resolve(out_dir: Path, path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else out_dir / p


def load_raw(cfg: dict, out_dir: Path) -> datapipe.RawDataset:
    d = cfg["data"]
    if d["path"] is not None:
        try:
            return datapipe.load_csv(_resolve(out_dir, d["path"]))
        except OSError as exc:
            raise DataError(f"cannot read dataset: {exc}") from None
    return datapipe.generate_synthetic(int(d["n_samples"]), cfg["seed"], float(d["noise_sigma"]),
                                       d["alpha"], d["beta"])


def load_split(cfg: dict, out_dir: Path, model=None):
    features = tuple(cfg["data"]["features"])
    unknown = [f for f in features if f not in datapipe.FEATURES_8]
    if unknown:
        raise ConfigError(f"unknown feature(s) {unknown}")
    if model is not None and model_width(model) != len(features):
        raise ConfigError(f"model expects {model_width(model)} inputs but {len(features)} features are configured")
    raw = load_raw(cfg, out_dir)
    if len(raw) < 2:
        raise DataError(f"dataset has {len(raw)} samples; need at least 2")
    ds = datapipe.assemble(raw, features)
    return datapipe.train_test_split(ds, float(cfg["data"]["test_fraction"]), cfg["seed"])


def clc_histogram(clc, bins: int = analysis.HIST_BINS) -> list[tuple[float, float, int]]:
    counts, edges = np.histogram(np.clip(clc, 0, 1), bins=bins, range=(0.0, 1.0))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


# --- outputs --------------------------------------------------------------------------


class Outputs:
    """Writes artifacts under one directory, refusing to clobber without ``overwrite``."""

    def __init__(self, out_dir: Path, cfg: dict, overwrite: bool, threads: int):
        self.dir = out_dir
        self.cfg = cfg
        self.overwrite = overwrite
        self.threads = threads
        self.hash = training.config_hash(cfg)

    def stamp(self) -> dict:
        return {"config_hash": self.hash, "seed": self.cfg["seed"]}

    def meta(self) -> dict:
        return {**self.stamp(), "library_version": __version__, "threads": self.threads,
                "reproducibility": "bitwise" if self.threads == 1 else
                "statistical: same seeds, summation order may differ"}

    def claim(self, *names) -> list[Path]:
        paths = [self.dir / n for n in names]
        clash = [str(p) for p in paths if p.exists()]
        if clash and not self.overwrite:
            raise ConfigError(f"refusing to overwrite {', '.join(clash)}; pass --overwrite")
        self.dir.mkdir(parents=True, exist_ok=True)
        return paths

    def json(self, path: Path, doc: dict) -> None:
        path.write_text(json.dumps({**self.meta(), **doc}, indent=1, default=training._json_default) + "\n")

    def csv(self, path: Path, rows: list[dict]) -> None:
        stamp = self.stamp()
        with open(path, "w", newline="") as fh:
            if not rows:
                fh.write(",".join(stamp) + "\n")
                return
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) + list(stamp))
            w.writeheader()
            for row in rows:
                w.writerow({**row, **stamp})


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(np.mean(v)), "min": float(np.min(v)), "max": float(np.max(v))}


def _flatten(prefix: str, stats: dict) -> dict:
    return {f"{prefix}_{k}": v for k, v in stats.items()}


# --- commands -------------------------------------------------------------------------


def cmd_generate_data(cfg, out: Outputs) -> int:
    d = cfg["data"]
    csv_path, manifest, hist_path = out.claim("data.csv", "data.manifest.json", "data_histogram.csv")
    raw = datapipe.generate_synthetic(int(d["n_samples"]), cfg["seed"], float(d["noise_sigma"]),
                                      d["alpha"], d["beta"])
    if len(raw) == 0:
        warnings.warn("no samples generated; writing a header-only file", RuntimeWarning, stacklevel=2)
    datapipe.save_csv(csv_path, raw)
    hist = clc_histogram(raw.clc)
    out.csv(hist_path, [{"bin_low": lo, "bin_high": hi, "count": c} for lo, hi, c in hist])
    out.json(manifest, {"command": "generate-data", "n_samples": len(raw), "config": cfg,
                        "files": {"data": csv_path.name, "histogram": hist_path.name}})
    print(f"samples: {len(raw)}")
    print("clc histogram (bin_low bin_high count):")
    for lo, hi, c in hist:
        print(f"  {lo:.2f} {hi:.2f} {c}")
    return 0


def cmd_fit_baseline(cfg, out: Outputs) -> int:
    (path,) = out.claim("baseline.json")
    raw = load_raw(cfg, out.dir)
    if "clc" not in raw.columns:
        raise DataError("dataset has no clc column")
    if len(raw) < 2:
        raise DataError(f"dataset has {len(raw)} samples; need at least 2")
    perm = np.random.default_rng(cfg["seed"]).permutation(len(raw))
    n_test = max(1, int(round(float(cfg["data"]["test_fraction"]) * len(raw))))
    test, train = raw.subset(np.sort(perm[:n_test])), raw.subset(np.sort(perm[n_test:]))
    fit = datapipe.fit_xu_randall(train)
    pred = datapipe.xu_randall(test.q_v, test.q_c, test.q_i, test.p, test.T, fit.alpha, fit.beta)
    mse = float(np.mean((pred - test.clc) ** 2))
    try:
        r2 = analysis.r2_score(pred, test.clc)
    except ValueError:
        r2 = None
    doc = {"command": "fit-baseline", "alpha": fit.alpha, "beta": fit.beta, "train_mse": fit.mse,
           "degenerate": fit.degenerate, "test": {"n": len(test), "mse": mse, "r2": r2}}
    out.json(path, doc)
    print(json.dumps({k: doc[k] for k in ("alpha", "beta")} | {"test_mse": mse, "test_r2": r2}))
    return 0


def cmd_train(cfg, out: Outputs, name: str = "run") -> int:
    model = build_model(cfg["model"], out.threads)
    tc = build_train_config(cfg)
    out.claim(f"{name}.jsonl", f"{name}.manifest.json")
    train_set, test_set = load_split(cfg, out.dir, model)
    try:
        rec = training.train(model, train_set, tc, test_set)
    except DivergenceError as exc:
        if exc.record is not None:
            training.write_run(exc.record, out.dir, name, {**out.meta(), "status": "diverged"})
        raise
    training.write_run(rec, out.dir, name, {**out.meta(), "status": "ok", "n_shots": tc.n_shots,
                                            "experiment_config": cfg})
    print(json.dumps({"train_mse": rec.train_mse[-1] if rec.epochs else None,
                      "test_mse": rec.test_mse[-1] if rec.epochs else None,
                      "manifest": f"{name}.manifest.json"}))
    return 0


def _trained_params(cfg, out: Outputs, model, train_set, test_set):
    """Parameters from ``analysis.params`` if set, otherwise from a fresh training run."""
    src = cfg["analysis"]["params"]
    if src is None:
        rec = training.train(model, train_set, build_train_config(cfg), test_set)
        return rec.final_params
    try:
        doc = json.loads(_resolve(out.dir, src).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read parameters from {src}: {exc}") from None
    theta = np.asarray(doc["final_params"], dtype=float)
    if doc.get("model") != model.describe():
        raise ConfigError(f"{src} was trained for a different model")
    return theta


def cmd_sweep(cfg, out: Outputs, kind: str) -> int:
    model = build_model(cfg["model"], out.threads)
    sw = cfg["sweep"]
    repeats = int(sw["repeats"])
    if repeats < 1:
        raise ConfigError("sweep.repeats must be >= 1")
    table, runs, manifest = out.claim(f"sweep_{kind}.csv", f"sweep_{kind}_runs.csv", f"sweep_{kind}.json")
    train_set, test_set = load_split(cfg, out.dir, model)
    tc = build_train_config(cfg)
    raw_rows, rows = [], []
    if kind == "train_size":
        raw_rows = training.sweep_train_size(model, train_set, [int(s) for s in sw["sizes"]], tc,
                                             test_set, repeats)
        for size in sw["sizes"]:
            pts = [r for r in raw_rows if r["n_train"] == int(size)]
            rows.append({"n_train": int(size), **_flatten("test_mse", _summary([r["test_mse"] for r in pts])),
                         **_flatten("test_r2", _summary([r["test_r2"] for r in pts]))})
    elif kind == "shots":
        if model.family != "qnn":
            raise ConfigError("the shots sweep needs a qnn model")
        theta = _trained_params(cfg, out, model, train_set, test_set)
        exact = float(np.mean((model.predict(theta, test_set.X) - test_set.y) ** 2))
        for n_shots in sw["shots"]:
            for rep in range(repeats):
                rng = np.random.default_rng([cfg["seed"], int(n_shots), rep])
                pred = model.predict_sampled(theta, test_set.X, int(n_shots), rng)
                raw_rows.append({"n_shots": int(n_shots), "repeat": rep,
                                 "test_mse": float(np.mean((pred - test_set.y) ** 2))})
            pts = [r["test_mse"] for r in raw_rows if r["n_shots"] == int(n_shots)]
            rows.append({"n_shots": int(n_shots), **_flatten("test_mse", _summary(pts)), "exact_test_mse": exact})
    elif kind == "lambda":
        if model.family != "qnn":
            raise ConfigError("the lambda sweep needs a qnn model")
        seeds = tc.seeds()
        for lam in sw["lams"]:
            for rep in range(repeats):
                init = training.derived_seed(seeds["init_seed"], rep) if rep else seeds["init_seed"]
                rec = training.train(model, train_set, replace(tc, lam=float(lam), lam_schedule=(),
                                                               init_seed=init), test_set)
                raw_rows.append({"lam": float(lam), "repeat": rep, "test_mse": rec.test_mse[-1],
                                 "test_mpv": rec.test_mpv[-1]})
            pts = [r for r in raw_rows if r["lam"] == float(lam)]
            rows.append({"lam": float(lam), **_flatten("test_mse", _summary([r["test_mse"] for r in pts])),
                         **_flatten("test_mpv", _summary([r["test_mpv"] for r in pts]))})
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}")
    out.csv(table, rows)
    out.csv(runs, raw_rows)
    out.json(manifest, {"command": f"sweep {kind}", "config": cfg, "model": model.describe(),
                        "files": {"summary": table.name, "runs": runs.name}})
    for r in rows:
        print(json.dumps(r))
    return 0


def _fim_rows(label, ens: analysis.FimEnsemble):
    rows = []
    for m, spec in enumerate(ens.spectra(normalized=True)):
        rows += [{"model": label, "draw": m, "index": i, "eigenvalue": float(v)} for i, v in enumerate(spec)]
    return rows


def cmd_analyze(cfg, out: Outputs, kind: str) -> int:
    an = cfg["analysis"]
    model = build_model(cfg["model"], out.threads)
    if kind == "fim":
        csv_path, report = out.claim("fim_spectra.csv", "fim_report.json")
        train_set, _ = load_split(cfg, out.dir, model)
        X = train_set.X[: int(an["fim_samples"])]
        models = [("primary", model)]
        if an["compare"] is not None:
            other = build_model(an["compare"], out.threads)
            if model_width(other) != model_width(model):
                raise ConfigError("analysis.compare must take the same number of inputs")
            models.append(("compare", other))
        rows, results = [], {}
        for label, m in models:
            try:
                ens = analysis.effective_dimension(m, X, int(an["n_draws"]), float(an["n_data"]), cfg["seed"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            rows += _fim_rows(label, ens)
            traces = [d.trace for d in ens.draws]
            results[label] = {"model": m.describe(), "effective_dimension": ens.effective_dimension,
                              "prior": ens.prior, "mean_trace": float(np.mean(traces)),
                              "min_eigenvalue": float(min(d.spectrum[-1] for d in ens.draws))}
        out.csv(csv_path, rows)
        out.json(report, {"command": "analyze fim", "config": cfg, "n_data": float(an["n_data"]),
                          "n_draws": int(an["n_draws"]), "n_inputs": len(X), "shared_ensemble": True,
                          "results": results})
        print(json.dumps({k: v["effective_dimension"] for k, v in results.items()}))
    elif kind == "dynamics":
        n_walkers = int(an["n_walkers"])
        if n_walkers < 2:
            raise ConfigError("training dynamics need at least two walkers (analysis.n_walkers >= 2)")
        msd_path, loss_path, report = out.claim("dynamics_msd.csv", "dynamics_losses.csv", "dynamics_report.json")
        train_set, test_set = load_split(cfg, out.dir, model)
        recs = training.train_ensemble(model, train_set, build_train_config(cfg), n_walkers, test_set)
        dyn = analysis.training_dynamics(recs, int(an["final_window"]))
        out.csv(msd_path, [{"snapshot": i, "step": int(s), "msd": float(v)}
                           for i, (s, v) in enumerate(zip(dyn.steps, dyn.msd))])
        out.csv(loss_path, [{"walker": w, "epoch": e + 1, "train_loss": v}
                            for w, r in enumerate(recs) for e, v in enumerate(r.train_loss)])
        out.json(report, {"command": "analyze dynamics", "config": cfg, "n_walkers": n_walkers,
                          "model": model.describe(), **dyn.as_dict()})
        print(json.dumps(dyn.as_dict()))
    elif kind == "evaluate":
        report, hist_path = out.claim("evaluate.json", "evaluate_histogram.csv")
        train_set, test_set = load_split(cfg, out.dir, model)
        theta = _trained_params(cfg, out, model, train_set, test_set)
        pred = model.predict(theta, test_set.X)
        try:
            clc = analysis.clc_metrics(pred, test_set.y).as_dict()
            r2_t = analysis.r2_score(pred, test_set.y)
        except ValueError as exc:
            raise DataError(f"cannot evaluate: {exc}") from None
        doc = {"command": "analyze evaluate", "config": cfg, "model": model.describe(), "n_test": len(test_set),
               "clc_scale": clc, "transformed_scale": {"mse": float(np.mean((pred - test_set.y) ** 2)), "r2": r2_t}}
        if model.family == "qnn":
            doc["test_mpv_single_shot"] = model.mpv(theta, test_set.X)
        p_hist = clc_histogram(datapipe.g_inv(pred))
        t_hist = clc_histogram(datapipe.g_inv(test_set.y))
        out.csv(hist_path, [{"bin_low": lo, "bin_high": hi, "predicted": c, "truth": t[2]}
                            for (lo, hi, c), t in zip(p_hist, t_hist)])
        out.json(report, doc)
        print(json.dumps(clc))
    else:
        raise ConfigError(f"unknown analysis kind {kind!r}")
    return 0


# --- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults fill missing keys)")
    common.add_argument("--out-dir", default=".", help="directory for all inputs and outputs")
    common.add_argument("--seed", type=int, help="overrides the config seed and QCOVER_SEED")
    common.add_argument("--threads", type=int, default=1, help="parallel work-list width")
    common.add_argument("--overwrite", action="store_true", help="replace existing outputs")

    parser = argparse.ArgumentParser(prog="qcover", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", parents=[common], help="write a synthetic dataset")
    sub.add_parser("fit-baseline", parents=[common], help="fit the Xu-Randall scheme")
    sub.add_parser("train", parents=[common], help="train one model")
    sub.add_parser("sweep", parents=[common], help="training-size, shot-count or lambda sweep").add_argument(
        "kind", choices=["train_size", "shots", "lambda"])
    sub.add_parser("analyze", parents=[common], help="Fisher information, dynamics or evaluation").add_argument(
        "kind", choices=["fim", "dynamics", "evaluate"])
    sub.add_parser("show-config", parents=[common], help="print the merged config")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, args.seed)
        if args.command == "show-config":
            print(json.dumps(cfg, indent=1))
            return 0
        out = Outputs(Path(args.out_dir), cfg, args.overwrite, args.threads)
        if args.command == "generate-data":
            return cmd_generate_data(cfg, out)
        if args.command == "fit-baseline":
            return cmd_fit_baseline(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.kind)
        return cmd_analyze(cfg, out, args.kind)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FloatingPointError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
