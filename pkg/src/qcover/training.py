"""Mini-batch Adam training for QNN and MLP regressors.

Both model families are wrapped behind the same small interface (:class:`QnnModel`,
:class:`MlpModel`) operating on flat parameter vectors, so one loop handles
noiseless training, finite-shot training and the variance-regularized objective
``MSE + lam * MPV``.

Seeds
-----
Three independent streams drive a run: ``init_seed`` (initial parameters),
``data_seed`` (epoch shuffles) and ``noise_seed`` (measurement shots).  Each
defaults to ``seed``.  Shot randomness for optimizer step ``t`` comes from
``default_rng([noise_seed, stream, t])`` so any step can be replayed alone.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import circuits, classical_nn, gradients
from .circuits import ArchitectureSpec
from .classical_nn import MlpSpec
from .datapipe import Dataset

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# sub-stream tag for counter-based shot seeds
_STREAM_TRAIN = 1


class DivergenceError(RuntimeError):
    """Training loss exploded relative to its initial value."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


# --- optimizer --------------------------------------------------------------------


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, params) -> "AdamState":
        params = np.array(params, dtype=float)
        return cls(params, np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(state: AdamState, grad, lr: float,
              beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS) -> AdamState:
    """One bias-corrected Adam update; returns a new state."""
    grad = np.asarray(grad, dtype=float)
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad**2
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return AdamState(state.params - lr * m_hat / (np.sqrt(v_hat) + eps), m, v, t)


# --- models ----------------------------------------------------------------------


class QnnModel:
    family = "qnn"

    def __init__(self, spec: ArchitectureSpec, threads: int = 1):
        self.spec = spec
        self.threads = threads

    @property
    def n_params(self) -> int:
        return circuits.param_count(self.spec)

    def init(self, rng_seed) -> np.ndarray:
        return circuits.init_params(self.spec, rng_seed).to_flat()

    def predict(self, theta, X) -> np.ndarray:
        return circuits.predict(self.spec, theta, X, self.threads)

    def predict_sampled(self, theta, X, n_shots, rng) -> np.ndarray:
        return circuits.predict_sampled(self.spec, theta, X, n_shots, rng, self.threads)

    def jacobian(self, theta, X):
        return gradients.prediction_jacobian(self.spec, theta, X, self.threads)

    def mpv(self, theta, X, n_shots=gradients.NOMINAL_SHOTS) -> float:
        return float(np.mean(prediction_variances(self.spec, theta, X))) / n_shots

    def objective(self, theta, X, y, lam, n_shots=None, rng=None, mpv_shots=gradients.NOMINAL_SHOTS):
        """``(loss, mse, mpv, grad)`` of ``MSE + lam * MPV`` on one batch."""
        if n_shots is not None:
            return gradients.sampled_regularized_batch(self.spec, theta, X, y, lam, n_shots, rng,
                                                       mpv_shots, self.threads)
        if lam == 0:
            mse, grad = gradients.grad_mse_batch(self.spec, theta, X, y, self.threads)
            return mse, mse, math.nan, grad
        return gradients.grad_regularized_batch(self.spec, theta, X, y, lam, mpv_shots, self.threads)

    def describe(self) -> dict:
        s = self.spec
        return {"family": "qnn", "kind": s.kind.value, "n_qubits": s.n_qubits, "n_enc": s.n_enc,
                "n_var": s.n_var, "hone_encoding": s.hone_encoding, "n_params": self.n_params}


class MlpModel:
    family = "mlp"

    def __init__(self, spec: MlpSpec):
        self.spec = spec

    @property
    def n_params(self) -> int:
        return classical_nn.mlp_param_count(self.spec)

    def init(self, rng_seed) -> np.ndarray:
        return classical_nn.init_mlp(self.spec, rng_seed)

    def predict(self, theta, X) -> np.ndarray:
        return classical_nn.mlp_predict(self.spec, theta, X)

    def jacobian(self, theta, X):
        return classical_nn.mlp_jacobian(self.spec, theta, X)

    def objective(self, theta, X, y, lam, n_shots=None, rng=None, mpv_shots=None):
        if lam or n_shots is not None:
            raise ValueError("classical networks have no shot noise or variance penalty")
        mse, grad = classical_nn.mlp_backward(self.spec, theta, X, y)
        return mse, mse, math.nan, grad

    def describe(self) -> dict:
        return {"family": "mlp", "layer_sizes": list(self.spec.layer_sizes),
                "activations": list(self.spec.activations), "n_params": self.n_params,
                "leaky_relu_slope": classical_nn.LEAKY_SLOPE, "init": "glorot_uniform"}


def prediction_variances(spec: ArchitectureSpec, theta, X) -> np.ndarray:
    """Exact single-shot variance ``sum_mn w_m w_n Cov[z_m, z_n]`` per sample."""
    _, w, _ = circuits.split_theta(spec, theta)
    probs = circuits.compiled(spec).probabilities(circuits.split_theta(spec, theta)[0],
                                                  circuits._check_features(spec, X))
    r = gradients.readout_table(spec, w)
    return np.maximum(probs @ r**2 - (probs @ r) ** 2, 0.0)


# --- configuration and records ------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 100
    epochs: int = 10
    n_shots: int | None = None          # None means exact expectations
    lam: float = 0.0
    lam_schedule: tuple = ()            # per-epoch lam values; last one repeats
    mpv_shots: int = gradients.NOMINAL_SHOTS
    seed: int = 0
    init_seed: int | None = None
    data_seed: int | None = None
    noise_seed: int | None = None
    snapshot_every: int = 0             # optimizer steps; 0 keeps epoch-end snapshots only
    eval_every: int = 1                 # epochs between full train/test evaluations
    divergence_factor: float = 1e3
    divergence_patience: int = 3

    def __post_init__(self):
        if self.lam < 0 or any(v < 0 for v in self.lam_schedule):
            raise ValueError("lam must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("need batch_size >= 1, epochs >= 0 and learning_rate > 0")
        if self.n_shots is not None and self.n_shots < 2:
            raise ValueError("n_shots must be >= 2 (or None for exact expectations)")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def seeds(self) -> dict:
        pick = lambda s: self.seed if s is None else s
        return {"init_seed": pick(self.init_seed), "data_seed": pick(self.data_seed),
                "noise_seed": pick(self.noise_seed)}

    def lam_at(self, epoch: int) -> float:
        if not self.lam_schedule:
            return self.lam
        return self.lam_schedule[min(epoch, len(self.lam_schedule) - 1)]


def config_hash(payload) -> str:
    text = json.dumps(payload, sort_keys=True, default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serialisable: {type(o)}")


@dataclass
class RunRecord:
    model: dict
    config: dict
    seeds: dict
    config_hash: str
    initial_loss: float
    initial_params: np.ndarray
    final_params: np.ndarray
    train_loss: list = field(default_factory=list)    # epoch mean of batch objectives
    train_mse: list = field(default_factory=list)     # full training set, NaN between evaluations
    test_mse: list = field(default_factory=list)
    train_mpv: list = field(default_factory=list)
    test_mpv: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)     # (step, params)
    wall_time: float = 0.0
    mpv_convention: str = "exact expectations / mpv_shots"

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def epoch_rows(self) -> list[dict]:
        rows = []
        for e in range(self.epochs):
            rows.append({"epoch": e + 1, "train_loss": self.train_loss[e],
                         "train_mse": self.train_mse[e], "test_mse": self.test_mse[e],
                         "train_mpv": self.train_mpv[e], "test_mpv": self.test_mpv[e]})
        return rows


def _finite_or_none(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x


def write_run(record: RunRecord, out_dir, name: str = "run", extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<name>.jsonl`` (one line per epoch) and ``<name>.manifest.json``.

    ``extra`` entries are merged into the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = out / f"{name}.jsonl"
    with open(lines, "w") as fh:
        for row in record.epoch_rows():
            row = {k: _finite_or_none(v) for k, v in row.items()}
            row.update(config_hash=record.config_hash, seed=record.seeds["init_seed"])
            fh.write(json.dumps(row) + "\n")
    manifest = out / f"{name}.manifest.json"
    doc = {
        "model": record.model,
        "config": record.config,
        "seeds": record.seeds,
        "config_hash": record.config_hash,
        "library_version": __version__,
        "mpv_convention": record.mpv_convention,
        "initial_loss": record.initial_loss,
        "initial_params": record.initial_params.tolist(),
        "final_params": record.final_params.tolist(),
        "snapshots": [{"step": s, "params": p.tolist()} for s, p in record.snapshots],
        **(extra or {}),
        "timing": {"wall_time_s": record.wall_time},
    }
    manifest.write_text(json.dumps(doc, indent=1, default=_json_default))
    return lines, manifest


def load_snapshots(manifest_path) -> tuple[np.ndarray, np.ndarray]:
    """``(steps, params)`` arrays from a manifest written by :func:`write_run`."""
    doc = json.loads(Path(manifest_path).read_text())
    steps = np.array([s["step"] for s in doc["snapshots"]])
    params = np.array([s["params"] for s in doc["snapshots"]])
    return steps, params


# --- training loop -------------------------------------------------------------------


def _evaluate(model, theta, ds: Dataset | None, want_mpv: bool, mpv_shots=gradients.NOMINAL_SHOTS):
    if ds is None or len(ds) == 0:
        return math.nan, math.nan
    mse = float(np.mean((model.predict(theta, ds.X) - ds.y) ** 2))
    mpv = model.mpv(theta, ds.X, mpv_shots) if want_mpv else math.nan
    return mse, mpv


def train(model, train_set: Dataset, config: TrainConfig, test_set: Dataset | None = None,
          init_params=None) -> RunRecord:
    """Fit ``model`` to ``train_set`` with mini-batch Adam.

    One epoch is ``len(train_set) // batch_size`` steps over a fresh shuffle.
    The loss trace holds the epoch mean of the batch objectives (sampled values
    in shot mode); exact train/test MSE and MPV are evaluated every
    ``config.eval_every`` epochs and always after the last one.

    Raises :class:`DivergenceError` when the epoch loss stays above
    ``divergence_factor`` times the initial loss for ``divergence_patience``
    consecutive epochs.
    """
    n = len(train_set)
    if n == 0:
        raise ValueError("training set is empty")
    if config.batch_size > n:
        raise ValueError(f"batch_size {config.batch_size} exceeds training set size {n}")
    seeds = config.seeds()
    theta0 = model.init(seeds["init_seed"]) if init_params is None else np.array(init_params, dtype=float)
    if theta0.shape != (model.n_params,):
        raise ValueError(f"initial parameters have shape {theta0.shape}, expected ({model.n_params},)")
    cfg_dict = asdict(config)
    record = RunRecord(
        model=model.describe(), config=cfg_dict, seeds=seeds,
        config_hash=config_hash({"model": model.describe(), "config": cfg_dict}),
        initial_loss=math.nan, initial_params=theta0.copy(), final_params=theta0.copy(),
    )
    want_mpv = model.family == "qnn"
    mse0, mpv0 = _evaluate(model, theta0, train_set, want_mpv, config.mpv_shots)
    lam0 = config.lam_at(0)
    record.initial_loss = mse0 + lam0 * mpv0 if lam0 else mse0
    record.snapshots.append((0, theta0.copy()))

    started = time.perf_counter()
    state = AdamState.fresh(theta0)
    steps_per_epoch = n // config.batch_size
    over = 0
    for epoch in range(config.epochs):
        lam = config.lam_at(epoch)
        order = np.random.default_rng([seeds["data_seed"], epoch]).permutation(n)
        losses = []
        for k in range(steps_per_epoch):
            idx = order[k * config.batch_size:(k + 1) * config.batch_size]
            rng = None
            if config.n_shots is not None:
                rng = np.random.default_rng([seeds["noise_seed"], _STREAM_TRAIN, state.t])
            loss, _, _, grad = model.objective(state.params, train_set.X[idx], train_set.y[idx], lam,
                                               config.n_shots, rng, config.mpv_shots)
            state = adam_step(state, grad, config.learning_rate)
            losses.append(loss)
            if config.snapshot_every and state.t % config.snapshot_every == 0:
                record.snapshots.append((state.t, state.params.copy()))
        record.train_loss.append(float(np.mean(losses)))
        last = epoch == config.epochs - 1
        if (epoch + 1) % config.eval_every == 0 or last:
            tr_mse, tr_mpv = _evaluate(model, state.params, train_set, want_mpv, config.mpv_shots)
            te_mse, te_mpv = _evaluate(model, state.params, test_set, want_mpv, config.mpv_shots)
        else:
            tr_mse = tr_mpv = te_mse = te_mpv = math.nan
        record.train_mse.append(tr_mse)
        record.test_mse.append(te_mse)
        record.train_mpv.append(tr_mpv)
        record.test_mpv.append(te_mpv)
        if not config.snapshot_every:
            record.snapshots.append((state.t, state.params.copy()))
        record.final_params = state.params.copy()

        bad = not math.isfinite(record.train_loss[-1]) or \
            record.train_loss[-1] > config.divergence_factor * record.initial_loss
        over = over + 1 if bad else 0
        if over >= config.divergence_patience:
            record.wall_time = time.perf_counter() - started
            raise DivergenceError(
                f"loss {record.train_loss[-1]:.3g} above {config.divergence_factor:g}x the initial "
                f"{record.initial_loss:.3g} for {over} epochs", record)
    record.wall_time = time.perf_counter() - started
    return record


def derived_seed(seed: int, walker: int) -> int:
    """Distinct, reproducible per-walker seed."""
    return int(np.random.SeedSequence([seed, walker]).generate_state(1)[0])


def train_ensemble(model, train_set: Dataset, config: TrainConfig, n_walkers: int,
                   test_set: Dataset | None = None, vary: str = "init") -> list[RunRecord]:
    """``n_walkers`` runs sharing the data order.

    ``vary='init'`` draws a fresh initialization per walker; ``vary='noise'``
    keeps the initialization and draws fresh shot noise instead.  Walker 0 uses
    the base seeds, so one walker reproduces :func:`train`.
    """
    if vary not in ("init", "noise"):
        raise ValueError("vary must be 'init' or 'noise'")
    seeds = config.seeds()
    out = []
    for m in range(n_walkers):
        cfg = replace(config, data_seed=seeds["data_seed"], init_seed=seeds["init_seed"],
                      noise_seed=seeds["noise_seed"])
        if m > 0:
            key = "init_seed" if vary == "init" else "noise_seed"
            cfg = replace(cfg, **{key: derived_seed(seeds[key], m)})
        out.append(train(model, train_set, cfg, test_set))
    return out


def sweep_train_size(model, train_pool: Dataset, sizes, config: TrainConfig, test_set: Dataset,
                     repeats: int = 1) -> list[dict]:
    """Train on seeded subsets of ``train_pool`` and report held-out errors per size."""
    rows = []
    for size in sizes:
        if size > len(train_pool):
            raise ValueError(f"size {size} exceeds the pool of {len(train_pool)} samples")
        for rep in range(repeats):
            rng = np.random.default_rng([config.seed, int(size), rep])
            idx = np.sort(rng.permutation(len(train_pool))[:size])
            subset = train_pool if size == len(train_pool) else train_pool.subset(idx)
            cfg = replace(config, batch_size=min(config.batch_size, size),
                          init_seed=derived_seed(config.seeds()["init_seed"], rep) if rep else config.init_seed)
            rec = train(model, subset, cfg, test_set)
            pred = model.predict(rec.final_params, test_set.X)
            rows.append({"n_train": int(size), "repeat": rep,
                         "train_mse": rec.train_mse[-1] if rec.epochs else math.nan,
                         "test_mse": float(np.mean((pred - test_set.y) ** 2)),
                         "test_r2": float(1 - np.mean((pred - test_set.y) ** 2) / np.var(test_set.y))})
    return rows
