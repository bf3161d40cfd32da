"""Evaluation metrics, Fisher information, effective dimension and training diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import circuits, classical_nn
from . import statevector as sv
from .circuits import ArchitectureSpec
from .datapipe import g_inv

HIST_BINS = 100


# --- metrics -------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    r2: float
    hellinger: float
    wasserstein: float

    def as_dict(self) -> dict:
        return {"mse": self.mse, "r2": self.r2, "hellinger": self.hellinger,
                "wasserstein": self.wasserstein}


def r2_score(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    var = np.var(t)
    if var == 0:
        raise ValueError("R^2 is undefined when all truths are identical")
    return float(1.0 - np.mean((p - t) ** 2) / var)


def hellinger(a, b, bins: int = HIST_BINS, value_range=(0.0, 1.0)) -> float:
    """Hellinger distance between the histograms of two samples on ``bins`` equal bins."""
    ca, _ = np.histogram(np.clip(a, *value_range), bins=bins, range=value_range)
    cb, _ = np.histogram(np.clip(b, *value_range), bins=bins, range=value_range)
    na, nb = ca.sum(), cb.sum()
    if na == 0 or nb == 0:
        raise ValueError("empty sample")
    # with integer counts the overlap is exactly na*nb for identical histograms
    overlap = np.sum(np.sqrt(ca.astype(float) * cb)) / math.sqrt(float(na) * nb)
    return float(math.sqrt(max(0.0, 1.0 - overlap)))


def wasserstein(a, b) -> float:
    """Wasserstein-1 distance between two empirical distributions."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    # integral of |F_a - F_b| between consecutive support points
    grid = np.concatenate([a, b])
    grid.sort(kind="mergesort")
    widths = np.diff(grid)
    fa = np.searchsorted(a, grid[:-1], side="right") / a.size
    fb = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * widths))


def metrics(predictions, truths) -> MetricsReport:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape or p.size < 2:
        raise ValueError("need equal-length arrays with at least two entries")
    return MetricsReport(float(np.mean((p - t) ** 2)), r2_score(p, t), hellinger(p, t), wasserstein(p, t))


def clc_metrics(y_pred, y_true) -> MetricsReport:
    """Metrics on the cloud-cover scale: transformed outputs are mapped back through ``g_inv``."""
    return metrics(g_inv(y_pred), g_inv(y_true))


# --- shot-noise variance ----------------------------------------------------------


def z_covariance(spec: ArchitectureSpec, params, x) -> np.ndarray:
    """Single-shot covariance of the per-qubit outcomes, diagonal ``1 - <Z_n>^2``."""
    state = circuits.output_state(spec, params, x)
    N = spec.n_qubits
    z = np.array([sv.expectation_z(state, n) for n in range(N)])
    cov = np.empty((N, N))
    for m in range(N):
        cov[m, m] = 1.0 - z[m] ** 2
        for n in range(m + 1, N):
            cov[m, n] = cov[n, m] = sv.expectation_zz(state, m, n) - z[m] * z[n]
    return cov


def prediction_variance(spec: ArchitectureSpec, params, x, n_shots: int) -> float:
    """Shot-noise variance ``sum_mn w_m w_n Cov[z_m, z_n] / n_shots`` of one prediction."""
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    theta = circuits._as_theta(spec, params)
    _, w, _ = circuits.split_theta(spec, theta)
    return float(w @ z_covariance(spec, theta, x) @ w) / n_shots


def mpv(spec: ArchitectureSpec, params, X, n_shots: int) -> float:
    """Mean prediction variance over a dataset."""
    from .training import prediction_variances

    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    return float(np.mean(prediction_variances(spec, circuits._as_theta(spec, params), X))) / n_shots


# --- Fisher information --------------------------------------------------------------


@dataclass
class FimResult:
    fim: np.ndarray
    spectrum: np.ndarray        # eigenvalues, descending
    trace: float
    params: np.ndarray


def fim_from_jacobian(jac) -> np.ndarray:
    jac = np.asarray(jac, dtype=float)
    F = jac.T @ jac / jac.shape[0]
    return 0.5 * (F + F.T)


def fim(model, params, X) -> FimResult:
    """Empirical Fisher information ``mean_x grad f grad f^T`` over all parameters."""
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        raise ValueError("dataset is empty")
    _, jac = model.jacobian(np.asarray(params, dtype=float), X)
    F = fim_from_jacobian(jac)
    spec = np.linalg.eigvalsh(F)[::-1]
    return FimResult(F, spec, float(np.trace(F)), np.array(params, dtype=float))


def sample_prior(model, n_draws: int, rng_seed) -> np.ndarray:
    """Parameter draws for Fisher-information ensembles.

    QNN: angles U[0, 2pi), weights U[-1, 1], bias U[0, 1].
    MLP: independent Glorot-uniform draws (biases zero), the network's own initializer.
    """
    rng = np.random.default_rng(rng_seed)
    if model.family == "qnn":
        spec = model.spec
        A, N = spec.n_angles, spec.n_qubits
        return np.column_stack([rng.uniform(0, 2 * math.pi, (n_draws, A)),
                                rng.uniform(-1, 1, (n_draws, N)),
                                rng.uniform(0, 1, (n_draws, 1))])
    seeds = rng.integers(0, 2**63, n_draws)
    return np.array([classical_nn.init_mlp(model.spec, int(s)) for s in seeds])


def normalized_fims(fims) -> np.ndarray:
    """``D * F / mean trace``, the trace averaged over the ensemble."""
    fims = np.asarray(fims, dtype=float)
    D = fims.shape[-1]
    mean_tr = np.mean(np.trace(fims, axis1=-2, axis2=-1))
    if mean_tr <= 0:
        return np.zeros_like(fims)
    return D * fims / mean_tr


def effective_dimension_from_fims(fims, n_data: float, normalize: bool = True) -> float:
    """Normalized effective dimension of an ensemble of Fisher matrices.

    ``2 log(mean_m sqrt det(I + c F_hat_m)) / (D log c)`` with
    ``c = n / (2 pi log n)``.  Log-determinants come from eigenvalues and the
    mean over draws is taken in log space.
    """
    if n_data <= math.e**2:
        raise ValueError("n_data must exceed e^2")
    fims = np.asarray(fims, dtype=float)
    if fims.ndim == 2:
        fims = fims[None]
    M, D = fims.shape[0], fims.shape[-1]
    c = n_data / (2 * math.pi * math.log(n_data))
    fh = normalized_fims(fims) if normalize else fims
    half_logdet = np.empty(M)
    for m in range(M):
        if not np.all(np.isfinite(fh[m])):
            raise FloatingPointError(f"non-finite Fisher matrix for parameter draw {m}")
        lam = np.linalg.eigvalsh(0.5 * (fh[m] + fh[m].T))
        val = 0.5 * np.sum(np.log1p(c * np.maximum(lam, 0.0)))
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite determinant for parameter draw {m}")
        half_logdet[m] = val
    return float(2.0 * (logsumexp(half_logdet) - math.log(M)) / (D * math.log(c)))


@dataclass
class FimEnsemble:
    draws: list = field(default_factory=list)     # FimResult per parameter draw
    effective_dimension: float = math.nan
    n_data: float = 1e5
    prior: str = ""

    def spectra(self, normalized: bool = True) -> np.ndarray:
        """``(M, D)`` eigenvalues, descending, of the (normalized) matrices."""
        F = np.array([d.fim for d in self.draws])
        if normalized:
            F = normalized_fims(F)
        return np.array([np.linalg.eigvalsh(f)[::-1] for f in F])


def effective_dimension(model, X, n_draws: int = 100, n_data: float = 1e5, rng_seed=0) -> FimEnsemble:
    """Fisher ensemble over prior draws and its normalized effective dimension.

    The same draws serve the spectra and the dimension estimate.
    """
    if n_draws < 2:
        raise ValueError("need at least two parameter draws")
    thetas = sample_prior(model, n_draws, rng_seed)
    draws = [fim(model, th, X) for th in thetas]
    d = effective_dimension_from_fims([r.fim for r in draws], n_data)
    prior = ("angles U[0,2pi), weights U[-1,1], bias U[0,1]" if model.family == "qnn"
             else "Glorot-uniform weights, zero biases")
    return FimEnsemble(draws, d, n_data, prior)


# --- training dynamics ---------------------------------------------------------------


@dataclass
class DynamicsReport:
    msd: np.ndarray                 # MSD(t) over snapshot index t
    integrated_msd: float
    mean_trace_corr: float
    loss_spread_all: float          # <sqrt Var(MSE)> over all epochs
    loss_spread_final: float        # same over the last `final_window` epochs
    final_param_spread: float       # (1/D) sum_i Var(theta_i(T)) over walkers
    steps: np.ndarray

    def as_dict(self) -> dict:
        return {"integrated_msd": self.integrated_msd, "mean_trace_corr": self.mean_trace_corr,
                "loss_spread_all": self.loss_spread_all, "loss_spread_final": self.loss_spread_final,
                "final_param_spread": self.final_param_spread}


def trajectory_stats(trajectories, losses=None, final_window: int = 25, steps=None) -> DynamicsReport:
    """Statistics of walker trajectories ``(M, T+1, D)`` (index 0 is the start).

    ``losses`` is an optional ``(M, epochs)`` array of training losses.
    """
    traj = np.asarray(trajectories, dtype=float)
    if traj.ndim != 3:
        raise ValueError("trajectories must have shape (walkers, snapshots, parameters)")
    M, T1, D = traj.shape
    disp = traj - traj[:, :1, :]
    msd = np.mean(np.sum(disp**2, axis=2), axis=0)
    integrated = float(np.mean(msd[1:])) if T1 > 1 else 0.0
    centered = traj - traj.mean(axis=1, keepdims=True)
    # tr(C) = (1/T) sum_t sum_i centered^2
    mean_tr = float(np.mean(np.sum(centered**2, axis=(1, 2)) / T1))
    final_spread = float(np.mean(np.var(traj[:, -1, :], axis=0)))
    if losses is not None and np.size(losses):
        sd = np.sqrt(np.var(np.asarray(losses, dtype=float), axis=0))
        spread_all = float(np.mean(sd))
        spread_final = float(np.mean(sd[-final_window:]))
    else:
        spread_all = spread_final = math.nan
    steps = np.arange(T1) if steps is None else np.asarray(steps)
    return DynamicsReport(msd, integrated, mean_tr, spread_all, spread_final, final_spread, steps)


def training_dynamics(records, final_window: int = 25) -> DynamicsReport:
    """Diagnostics of an ensemble of runs recorded with identical snapshot cadence."""
    if len(records) < 2:
        raise ValueError("training dynamics need at least two walkers")
    steps = [tuple(s for s, _ in r.snapshots) for r in records]
    if len(set(steps)) != 1:
        raise ValueError("walkers have different snapshot steps")
    traj = np.array([[p for _, p in r.snapshots] for r in records])
    losses = []
    for r in records:
        tm = np.asarray(r.train_mse, dtype=float)
        losses.append(tm if tm.size and np.all(np.isfinite(tm)) else np.asarray(r.train_loss, dtype=float))
    return trajectory_stats(traj, np.array(losses), final_window, np.array(steps[0]))
