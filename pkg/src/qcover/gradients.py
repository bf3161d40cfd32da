"""Parameter-shift gradients of QNN predictions, losses and the shot-noise variance.

Gradients are flat arrays in the order of :meth:`ParameterSet.to_flat`: circuit
angles, then readout weights, then the bias.

Everything is expressed through Born probabilities.  With the readout value of
basis state ``k``, ``r_k = sum_n w_n z_n(k)``, the prediction is
``f = b + p . r`` and its single-shot variance is ``p . r**2 - (p . r)**2``.
Both are linear in the probabilities ``p`` (the variance up to the square of a
linear term), so the parameter-shift rule applies to them directly::

    d<O>/d(local angle) = (<O>(+pi/2) - <O>(-pi/2)) / 2

A circuit angle shared by several gates (the ion coupling, which applies angle
``c * theta`` to each pair) collects ``c`` times each local derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import statevector as sv
from .circuits import (
    ArchitectureSpec,
    _as_theta,
    _check_features,
    compiled,
    param_count,
    predict,
    sample_counts,
    split_theta,
)

# Shot counts used by the variance penalty when no measurement budget is given:
# the penalty then acts on the single-shot variance.
NOMINAL_SHOTS = 1


@dataclass(frozen=True)
class ShiftTerm:
    """One pair of shifted circuits in a gradient."""

    gate: int          # position in the gate program
    angle_index: int   # circuit angle the gate reads
    coefficient: float
    shifts: tuple = (np.pi / 2, -np.pi / 2)


def shift_work_list(spec: ArchitectureSpec) -> list[ShiftTerm]:
    """Independent shifted-circuit evaluations making up one gradient.

    Summing ``coefficient * (<O>(+) - <O>(-)) / 2`` over the list, in list order,
    into ``angle_index`` reproduces :func:`param_shift_grad_expectation`.
    """
    cc = compiled(spec)
    return [ShiftTerm(int(g), int(a), float(c)) for g, a, c in zip(cc.tg_gate, cc.tg_param, cc.tg_coef)]


def _shifted(spec, theta, X, threads):
    angles, _, _ = split_theta(spec, theta)
    return compiled(spec).shifted_probabilities(angles, X, threads)


def _shifted_obs(spec, theta, X, observables, threads):
    angles, _, _ = split_theta(spec, theta)
    return compiled(spec).shifted_expectations(angles, X, observables, threads)


def _local_to_angles(spec, d_local):
    # d_local: (..., J) derivatives w.r.t. each shifted gate's own angle
    return d_local @ compiled(spec).chain


def _parse_observable(spec, observable):
    if isinstance(observable, str):
        kind, idx = observable, ()
    else:
        kind, *idx = observable
    N = spec.n_qubits
    signs = sv.z_signs(N)
    if kind == "z" and len(idx) == 1 and 0 <= idx[0] < N:
        return signs[:, idx[0]].astype(float)
    if kind == "zz" and len(idx) == 2 and all(0 <= i < N for i in idx):
        return (signs[:, idx[0]] * signs[:, idx[1]]).astype(float)
    raise ValueError(f"observable must be ('z', n) or ('zz', m, n) with indices < {N}, got {observable!r}")


def param_shift_grad_expectation(spec: ArchitectureSpec, params, x, observable) -> np.ndarray:
    """Gradient of ``<Z_n>`` (``('z', n)``) or ``<Z_m Z_n>`` (``('zz', m, n)``) over circuit angles."""
    diag = _parse_observable(spec, observable)
    theta = _as_theta(spec, params)
    X = _check_features(spec, x)[:1]
    _, ev = _shifted_obs(spec, theta, X, diag, 1)
    return _local_to_angles(spec, 0.5 * (ev[0, :, 0, 0] - ev[0, :, 1, 0]))


def readout_table(spec: ArchitectureSpec, weights) -> np.ndarray:
    """Readout value ``sum_n w_n z_n(k)`` of every basis state ``k``."""
    return sv.z_signs(spec.n_qubits) @ np.asarray(weights, dtype=float)


def prediction_jacobian(spec: ArchitectureSpec, params, X, threads: int = 1):
    """Exact predictions and their full gradients for a batch.

    Returns ``(f, jac)`` with ``f`` of shape ``(B,)`` and ``jac`` of shape ``(B, D)``.
    """
    theta = _as_theta(spec, params)
    _, w, b = split_theta(spec, theta)
    X = _check_features(spec, X)
    signs = sv.z_signs(spec.n_qubits)
    r = signs @ w
    p0, ev = _shifted_obs(spec, theta, X, r, threads)
    z = p0 @ signs
    f = b + p0 @ r
    jac = np.empty((X.shape[0], param_count(spec)))
    jac[:, :spec.n_angles] = _local_to_angles(spec, 0.5 * (ev[..., 0, 0] - ev[..., 1, 0]))
    jac[:, spec.n_angles:-1] = z
    jac[:, -1] = 1.0
    return f, jac


def grad_prediction(spec: ArchitectureSpec, params, x) -> np.ndarray:
    """Full gradient of ``f(x)``: circuit angles, ``<Z_n>`` for ``w_n``, and 1 for the bias."""
    _, jac = prediction_jacobian(spec, params, np.atleast_2d(x))
    return jac[0]


def grad_mse_batch(spec: ArchitectureSpec, params, X, y, threads: int = 1):
    """Mean squared error over the batch and its gradient."""
    y = np.asarray(y, dtype=float)
    f, jac = prediction_jacobian(spec, params, X, threads)
    res = f - y
    return float(np.mean(res**2)), 2.0 * (res @ jac) / len(y)


def _variance_terms(spec, theta, X, threads):
    """Per-sample f, single-shot variance, and both gradients."""
    _, w, b = split_theta(spec, theta)
    signs = sv.z_signs(spec.n_qubits)
    r = signs @ w
    p0, ev = _shifted_obs(spec, theta, X, np.stack([r, r**2]), threads)
    m1 = p0 @ r
    m2 = p0 @ r**2
    var = m2 - m1**2
    d1 = 0.5 * (ev[..., 0, 0] - ev[..., 1, 0])
    d2 = 0.5 * (ev[..., 0, 1] - ev[..., 1, 1])
    B = X.shape[0]
    grad_f = np.empty((B, param_count(spec)))
    grad_f[:, :spec.n_angles] = _local_to_angles(spec, d1)
    grad_f[:, spec.n_angles:-1] = p0 @ signs
    grad_f[:, -1] = 1.0
    grad_var = np.zeros((B, param_count(spec)))
    grad_var[:, :spec.n_angles] = _local_to_angles(spec, d2 - 2.0 * m1[:, None] * d1)
    # d var / d w = 2 Cov w, with Cov = E[s s^T] - z z^T
    grad_var[:, spec.n_angles:-1] = 2.0 * ((p0 * r) @ signs - m1[:, None] * (p0 @ signs))
    return b + m1, var, grad_f, grad_var


def grad_mpv_batch(spec: ArchitectureSpec, params, X, n_shots: int = NOMINAL_SHOTS, threads: int = 1):
    """Mean prediction variance over the batch and its gradient.

    The variance is exact (no sampling) and divided by ``n_shots``; the default
    ``NOMINAL_SHOTS = 1`` gives the single-shot variance.
    """
    theta = _as_theta(spec, params)
    X = _check_features(spec, X)
    _, var, _, grad_var = _variance_terms(spec, theta, X, threads)
    return float(np.mean(var)) / n_shots, grad_var.mean(axis=0) / n_shots


def grad_regularized_batch(spec: ArchitectureSpec, params, X, y, lam: float,
                           n_shots: int = NOMINAL_SHOTS, threads: int = 1):
    """``MSE + lam * MPV`` over the batch with its gradient; returns ``(loss, mse, mpv, grad)``."""
    theta = _as_theta(spec, params)
    X = _check_features(spec, X)
    y = np.asarray(y, dtype=float)
    f, var, grad_f, grad_var = _variance_terms(spec, theta, X, threads)
    res = f - y
    mse = float(np.mean(res**2))
    mpv = float(np.mean(var)) / n_shots
    grad = 2.0 * (res @ grad_f) / len(y) + lam * grad_var.mean(axis=0) / n_shots
    return mse + lam * mpv, mse, mpv, grad


def sampled_regularized_batch(spec: ArchitectureSpec, params, X, y, lam: float, n_shots: int,
                              rng, mpv_shots: int = NOMINAL_SHOTS, threads: int = 1):
    """Shot-noise estimate of ``MSE + lam * MPV`` and an unbiased estimate of its gradient.

    Every circuit evaluation is a fresh set of ``n_shots`` measurements drawn
    from ``rng``:

    * set A at the unshifted angles gives ``f`` and the single-shot variance
      (same shots for both, unbiased sample variance);
    * set B, also unshifted, gives the ``<Z_n>`` and covariance estimates used
      by the weight gradients, independent of set A so products stay unbiased;
    * one set per shifted circuit gives the circuit-angle gradients.

    Returns ``(loss, mse, mpv, grad)`` where ``mpv`` is divided by ``mpv_shots``.
    """
    if n_shots < 2:
        raise ValueError(f"shot-noise training needs n_shots >= 2, got {n_shots}")
    theta = _as_theta(spec, params)
    _, w, b = split_theta(spec, theta)
    X = _check_features(spec, X)
    y = np.asarray(y, dtype=float)
    B = X.shape[0]
    p0, ps = _shifted(spec, theta, X, threads)
    signs = sv.z_signs(spec.n_qubits).astype(float)
    r = signs @ w
    n = float(n_shots)

    counts_a = sample_counts(p0, n_shots, rng).astype(float)
    m1 = counts_a @ r / n
    var = (counts_a @ r**2 - n * m1**2) / (n - 1.0)
    f = b + m1

    counts_b = sample_counts(p0, n_shots, rng).astype(float)
    z_b = counts_b @ signs / n
    m1_b = counts_b @ r / n
    cov_w = ((counts_b * r) @ signs - n * m1_b[:, None] * z_b) / (n - 1.0)

    counts_s = sample_counts(ps, n_shots, rng).astype(float)     # (B, J, 2, dim)
    s1 = counts_s @ r / n
    s2 = counts_s @ r**2 / n
    d1 = 0.5 * (s1[..., 0] - s1[..., 1])
    # shifted second moments minus 2 m1 d1, with m1 from set A (independent of the shifted sets)
    d2 = 0.5 * (s2[..., 0] - s2[..., 1])

    res = f - y
    grad = np.empty(param_count(spec))
    ang = spec.n_angles
    grad[:ang] = 2.0 * (res @ _local_to_angles(spec, d1)) / B
    grad[ang:-1] = 2.0 * (res @ z_b) / B
    grad[-1] = 2.0 * res.mean()
    if lam:
        grad[:ang] += lam * _local_to_angles(spec, d2 - 2.0 * m1[:, None] * d1).mean(axis=0) / mpv_shots
        grad[ang:-1] += lam * 2.0 * cov_w.mean(axis=0) / mpv_shots
    mse = float(np.mean(res**2))
    mpv = float(np.mean(var)) / mpv_shots
    return mse + lam * mpv, mse, mpv, grad


def finite_diff_grad(spec: ArchitectureSpec, params, x, epsilon: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f(x)`` in every flat parameter."""
    theta = _as_theta(spec, params).copy()
    X = np.atleast_2d(np.asarray(x, dtype=float))
    D = theta.size
    plus = np.repeat(theta[None], D, axis=0) + epsilon * np.eye(D)
    minus = np.repeat(theta[None], D, axis=0) - epsilon * np.eye(D)
    out = np.empty(D)
    for j in range(D):
        out[j] = (predict(spec, plus[j], X)[0] - predict(spec, minus[j], X)[0]) / (2 * epsilon)
    return out
