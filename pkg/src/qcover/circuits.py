"""Data re-uploading QNN architectures and their forward pass.

A circuit is described once, as a flat *gate program* (:func:`circuit_gates`):
an ordered list of :class:`Gate` records in application order.  Both the fast
compiled simulator and the reference path through :mod:`qcover.statevector`
consume the same program, so the parameter-to-gate table below is the only
place the architectures are defined.

Parameter layout
----------------
Circuit angles are stored flat: the ``n_enc`` encoding blocks first, then the
``n_var`` variational blocks.  Inside a block, index ``i`` (0-based) is slice
entry ``i + 1`` of the block formulas.  Pair rotations ``R_aa`` act on the
nearest-neighbour pairs ``(n, n+1)``, taking the slice entries in order.  Gates
inside a block are applied in this order (first listed acts first):

============  ======================================================================
kind          encoding block V  /  variational block W
============  ======================================================================
XYZ           V: Rzz[0:N-1], Rxx[N-1:2N-2], Ryy[2N-2:3N-3]
              W: Rzz[0:N-1], Rxx[N-1:2N-2], Ryy[2N-2:3N-3], Rx[3N-3:4N-3]
ZZXY          V: Rzz[0:N-1], Ry[N-1:2N-1]
              W: Rx[0:N], Rzz[N:2N-1], Ry[2N-1:3N-1]
CNOT_PBC      V: CNOT ring, Ry[0:N], Rz[N:2N]
              W: CNOT ring, Ry[0:N], Rz[N:2N], Rx[2N:3N]
CNOT_NN       as CNOT_PBC without the closing CNOT(N-1 -> 0)
IONS          V: U_ions[0], Ry[1:N+1]
              W: Rx[0:N], Rz[N:2N], U_ions[2N], Ry[2N+1:3N+1]
============  ======================================================================

The CNOT ring is CNOT(0->1), CNOT(1->2), ..., CNOT(N-2 -> N-1) followed by
CNOT(N-1 -> 0).  The encoding layer is Rx(x) (Rz(x) for IONS); with
``hone_encoding`` it is followed by Rx(x_m x_{m+1} / 2pi) on qubits 0..N-2.  IONS
circuits start from the Hadamard layer applied once to ``|0...0>``.

The prediction is ``f(x) = b + sum_n w_n <Z_n>``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from . import statevector as sv
from ._engine import CompiledCircuit


class ArchitectureKind(str, Enum):
    XYZ = "XYZ"
    ZZXY = "ZZXY"
    CNOT_PBC = "CNOT_PBC"
    CNOT_NN = "CNOT_NN"
    IONS = "IONS"


def block_sizes(kind: ArchitectureKind, n_qubits: int) -> tuple[int, int]:
    """Sizes ``(|V|, |W|)`` of the encoding and variational blocks."""
    N = n_qubits
    kind = ArchitectureKind(kind)
    return {
        ArchitectureKind.XYZ: (3 * N - 3, 4 * N - 3),
        ArchitectureKind.ZZXY: (2 * N - 1, 3 * N - 1),
        ArchitectureKind.CNOT_PBC: (2 * N, 3 * N),
        ArchitectureKind.CNOT_NN: (2 * N, 3 * N),
        ArchitectureKind.IONS: (N + 1, 3 * N + 1),
    }[kind]


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: ArchitectureKind
    n_qubits: int
    n_enc: int
    n_var: int
    hone_encoding: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", ArchitectureKind(self.kind))
        if not 2 <= self.n_qubits <= sv.MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [2, {sv.MAX_QUBITS}], got {self.n_qubits}")
        if self.n_enc < 1:
            raise ValueError(f"n_enc must be >= 1, got {self.n_enc}")
        if self.n_var < 0:
            raise ValueError(f"n_var must be >= 0, got {self.n_var}")
        if self.hone_encoding and self.kind not in (ArchitectureKind.CNOT_PBC, ArchitectureKind.CNOT_NN):
            raise ValueError("hone_encoding is only defined for CNOT_PBC and CNOT_NN")

    @property
    def n_angles(self) -> int:
        v, w = block_sizes(self.kind, self.n_qubits)
        return self.n_enc * v + self.n_var * w

    @property
    def label(self) -> str:
        return f"{self.kind.value}^{self.n_qubits}_{self.n_enc},{self.n_var}"


def param_count(spec: ArchitectureSpec) -> int:
    """Number of trainable scalars ``D = n_enc |V| + n_var |W| + N + 1``."""
    return spec.n_angles + spec.n_qubits + 1


@dataclass(frozen=True)
class ParameterSet:
    enc_blocks: tuple
    var_blocks: tuple
    weights: np.ndarray
    bias: float

    def to_flat(self) -> np.ndarray:
        parts = [np.asarray(b, dtype=float) for b in (*self.enc_blocks, *self.var_blocks)]
        parts += [np.asarray(self.weights, dtype=float), np.array([self.bias], dtype=float)]
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, spec: ArchitectureSpec, theta) -> "ParameterSet":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (param_count(spec),):
            raise ValueError(f"expected {param_count(spec)} parameters, got shape {theta.shape}")
        v, w = block_sizes(spec.kind, spec.n_qubits)
        enc = tuple(theta[k * v:(k + 1) * v].copy() for k in range(spec.n_enc))
        off = spec.n_enc * v
        var = tuple(theta[off + k * w:off + (k + 1) * w].copy() for k in range(spec.n_var))
        off += spec.n_var * w
        return cls(enc, var, theta[off:off + spec.n_qubits].copy(), float(theta[-1]))

    def check(self, spec: ArchitectureSpec) -> None:
        v, w = block_sizes(spec.kind, spec.n_qubits)
        if len(self.enc_blocks) != spec.n_enc or any(len(b) != v for b in self.enc_blocks):
            raise ValueError(f"{spec.label}: expected {spec.n_enc} encoding blocks of size {v}")
        if len(self.var_blocks) != spec.n_var or any(len(b) != w for b in self.var_blocks):
            raise ValueError(f"{spec.label}: expected {spec.n_var} variational blocks of size {w}")
        if len(self.weights) != spec.n_qubits:
            raise ValueError(f"{spec.label}: expected {spec.n_qubits} weights")


def params_to_json(spec: ArchitectureSpec, params: ParameterSet) -> str:
    doc = {
        "kind": spec.kind.value,
        "N": spec.n_qubits,
        "n_enc": spec.n_enc,
        "n_var": spec.n_var,
        "enc_blocks": [[float(a) for a in b] for b in params.enc_blocks],
        "var_blocks": [[float(a) for a in b] for b in params.var_blocks],
        "weights": [float(a) for a in params.weights],
        "bias": float(params.bias),
    }
    if spec.hone_encoding:
        doc["hone_encoding"] = True
    return json.dumps(doc)


def params_from_json(text: str) -> tuple[ArchitectureSpec, ParameterSet]:
    doc = json.loads(text)
    spec = ArchitectureSpec(doc["kind"], doc["N"], doc["n_enc"], doc["n_var"],
                            bool(doc.get("hone_encoding", False)))
    params = ParameterSet(
        tuple(np.array(b, dtype=float) for b in doc["enc_blocks"]),
        tuple(np.array(b, dtype=float) for b in doc["var_blocks"]),
        np.array(doc["weights"], dtype=float),
        float(doc["bias"]),
    )
    params.check(spec)
    return spec, params


def init_params(spec: ArchitectureSpec, rng_seed, scheme: str = "uniform_angles") -> ParameterSet:
    """Angles ~ U[0, 2pi), weights ~ U[-1/N, 1/N], bias = 0.5."""
    if scheme != "uniform_angles":
        raise ValueError(f"unknown initialisation scheme {scheme!r}")
    rng = np.random.default_rng(rng_seed)
    angles = rng.uniform(0.0, 2 * math.pi, spec.n_angles)
    N = spec.n_qubits
    weights = rng.uniform(-1.0 / N, 1.0 / N, N)
    return ParameterSet.from_flat(spec, np.concatenate([angles, weights, [0.5]]))


# --- gate program -----------------------------------------------------------------


@dataclass(frozen=True)
class Gate:
    kind: str            # 'rot', 'pair', 'cnot' or 'h'
    axis: str | None
    qubits: tuple
    source: str          # 'param', 'feature', 'hone' or 'none'
    index: int = -1      # circuit-angle index or feature index
    scale: float = 1.0


def _rot_layer(axis, N, offset, qubits=None):
    qubits = range(N) if qubits is None else qubits
    return [Gate("rot", axis, (q,), "param", offset + i) for i, q in enumerate(qubits)]


def _pair_layer(axis, N, offset):
    return [Gate("pair", axis, (n, n + 1), "param", offset + n) for n in range(N - 1)]


def _cnot_layer(N, ring):
    gates = [Gate("cnot", None, (n, n + 1), "none") for n in range(N - 1)]
    if ring and N > 2:
        gates.append(Gate("cnot", None, (N - 1, 0), "none"))
    return gates


def _ions_layer(N, index):
    return [Gate("pair", "x", (q1, q2), "param", index, coef) for q1, q2, coef in sv.ions_pairs(N)]


def _encoding_block(kind, N, o):
    K = ArchitectureKind
    if kind is K.XYZ:
        return _pair_layer("z", N, o) + _pair_layer("x", N, o + N - 1) + _pair_layer("y", N, o + 2 * N - 2)
    if kind is K.ZZXY:
        return _pair_layer("z", N, o) + _rot_layer("y", N, o + N - 1)
    if kind in (K.CNOT_PBC, K.CNOT_NN):
        return _cnot_layer(N, kind is K.CNOT_PBC) + _rot_layer("y", N, o) + _rot_layer("z", N, o + N)
    return _ions_layer(N, o) + _rot_layer("y", N, o + 1)


def _variational_block(kind, N, o):
    K = ArchitectureKind
    if kind is K.XYZ:
        return (_pair_layer("z", N, o) + _pair_layer("x", N, o + N - 1)
                + _pair_layer("y", N, o + 2 * N - 2) + _rot_layer("x", N, o + 3 * N - 3))
    if kind is K.ZZXY:
        return _rot_layer("x", N, o) + _pair_layer("z", N, o + N) + _rot_layer("y", N, o + 2 * N - 1)
    if kind in (K.CNOT_PBC, K.CNOT_NN):
        return (_cnot_layer(N, kind is K.CNOT_PBC) + _rot_layer("y", N, o)
                + _rot_layer("z", N, o + N) + _rot_layer("x", N, o + 2 * N))
    return (_rot_layer("x", N, o) + _rot_layer("z", N, o + N) + _ions_layer(N, o + 2 * N)
            + _rot_layer("y", N, o + 2 * N + 1))


def _encoding_layer(spec):
    N = spec.n_qubits
    axis = "z" if spec.kind is ArchitectureKind.IONS else "x"
    gates = [Gate("rot", axis, (n,), "feature", n) for n in range(N)]
    if spec.hone_encoding:
        gates += [Gate("rot", "x", (m,), "hone", m) for m in range(N - 1)]
    return gates


@lru_cache(maxsize=None)
def circuit_gates(spec: ArchitectureSpec) -> tuple:
    """The full gate program of ``spec`` in application order."""
    N = spec.n_qubits
    v, w = block_sizes(spec.kind, N)
    gates = []
    if spec.kind is ArchitectureKind.IONS:
        gates += [Gate("h", None, (n,), "none") for n in range(N)]
    for k in range(spec.n_enc):
        gates += _encoding_layer(spec)
        gates += _encoding_block(spec.kind, N, k * v)
    off = spec.n_enc * v
    for k in range(spec.n_var):
        gates += _variational_block(spec.kind, N, off + k * w)
    return tuple(gates)


@lru_cache(maxsize=None)
def compiled(spec: ArchitectureSpec) -> CompiledCircuit:
    return CompiledCircuit(spec.n_qubits, circuit_gates(spec), spec.n_angles)


def split_theta(spec: ArchitectureSpec, theta):
    """``(angles, weights, bias)`` views of a flat parameter vector."""
    theta = np.asarray(theta, dtype=float)
    A, N = spec.n_angles, spec.n_qubits
    if theta.shape != (A + N + 1,):
        raise ValueError(f"{spec.label}: expected {A + N + 1} parameters, got shape {theta.shape}")
    return theta[:A], theta[A:A + N], theta[-1]


def _as_theta(spec, params):
    if isinstance(params, ParameterSet):
        params.check(spec)
        return params.to_flat()
    return np.asarray(params, dtype=float)


def _check_features(spec, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.n_qubits:
        raise ValueError(f"{spec.label}: expected {spec.n_qubits} features, got {X.shape[1]}")
    if np.any(X < -1e-12) or np.any(X > math.pi + 1e-12):
        warnings.warn("input features outside [0, pi]", RuntimeWarning, stacklevel=3)
    return X


# --- reference path ---------------------------------------------------------------


def apply_gate(state: sv.Statevector, gate: Gate, angle: float) -> sv.Statevector:
    if gate.kind == "rot":
        return sv.apply_rot(state, gate.axis, gate.qubits[0], angle)
    if gate.kind == "pair":
        return sv.apply_two_pauli_rot(state, gate.axis, *gate.qubits, angle)
    if gate.kind == "cnot":
        return sv.apply_cnot(state, *gate.qubits)
    return sv.apply_hadamard(state, gate.qubits[0])


def gate_angle(gate: Gate, angles, x) -> float:
    if gate.source == "param":
        return gate.scale * angles[gate.index]
    if gate.source == "feature":
        return gate.scale * x[gate.index]
    if gate.source == "hone":
        return gate.scale * x[gate.index] * x[gate.index + 1] / (2 * math.pi)
    return 0.0


def encode_layer(state: sv.Statevector, spec: ArchitectureSpec, x) -> sv.Statevector:
    """Apply one data-upload layer S(x) to ``state``."""
    x = _check_features(spec, x)[0]
    for gate in _encoding_layer(spec):
        apply_gate(state, gate, gate_angle(gate, None, x))
    return state


def output_state(spec: ArchitectureSpec, params, x, angle_offsets=None) -> sv.Statevector:
    """Run the gate program gate by gate on a :class:`Statevector`.

    ``angle_offsets`` (one entry per gate of :func:`circuit_gates`) is added to
    each gate's angle; it is how shifted circuits are built on this path.
    """
    angles, _, _ = split_theta(spec, _as_theta(spec, params))
    x = _check_features(spec, x)[0]
    state = sv.zero_state(spec.n_qubits)
    for g, gate in enumerate(circuit_gates(spec)):
        angle = gate_angle(gate, angles, x)
        if angle_offsets is not None:
            angle += angle_offsets[g]
        apply_gate(state, gate, angle)
    return state


def forward_reference(spec: ArchitectureSpec, params, x) -> float:
    theta = _as_theta(spec, params)
    _, w, b = split_theta(spec, theta)
    state = output_state(spec, theta, x)
    z = [sv.expectation_z(state, n) for n in range(spec.n_qubits)]
    return float(b + np.dot(w, z))


# --- fast path ----------------------------------------------------------------------


def expectations(spec: ArchitectureSpec, params, X, threads: int = 1) -> np.ndarray:
    """``<Z_n>`` for every sample; shape ``(B, N)``."""
    theta = _as_theta(spec, params)
    angles, _, _ = split_theta(spec, theta)
    X = _check_features(spec, X)
    probs = compiled(spec).probabilities(angles, X, threads)
    return probs @ sv.z_signs(spec.n_qubits)


def predict(spec: ArchitectureSpec, params, X, threads: int = 1) -> np.ndarray:
    """Exact predictions ``f(x)`` for a batch of feature rows."""
    theta = _as_theta(spec, params)
    _, w, b = split_theta(spec, theta)
    return b + expectations(spec, theta, X, threads) @ w


def forward(spec: ArchitectureSpec, params, x) -> float:
    """Exact (infinite-shot) prediction for one feature vector."""
    return float(predict(spec, params, np.atleast_2d(x))[0])


def counts_to_z(counts: np.ndarray, n_qubits: int, n_shots: int) -> np.ndarray:
    """Per-qubit sigma^z estimates from outcome counts over the computational basis."""
    return counts @ sv.z_signs(n_qubits) / n_shots


def sample_counts(probs: np.ndarray, n_shots: int, rng) -> np.ndarray:
    """Outcome histograms of ``n_shots`` i.i.d. measurements per probability row."""
    p = np.clip(probs, 0.0, None)
    p = p / p.sum(axis=-1, keepdims=True)
    return rng.multinomial(n_shots, p)


def forward_sampled(spec: ArchitectureSpec, params, x, n_shots: int, rng_seed):
    """Shot-noise estimate of ``f(x)`` from one set of ``n_shots`` bit-strings.

    Every per-qubit estimate comes from the same shots.  Returns
    ``(estimate, per_qubit_estimates)``.
    """
    if n_shots < 1:
        raise ValueError(f"n_shots must be >= 1, got {n_shots}")
    theta = _as_theta(spec, params)
    angles, w, b = split_theta(spec, theta)
    X = _check_features(spec, x)
    probs = compiled(spec).probabilities(angles, X[:1])[0]
    state = sv.Statevector(spec.n_qubits, np.sqrt(probs).astype(np.complex128))
    bits = sv.sample_bitstrings(state, n_shots, rng_seed)
    z = bits.mean(axis=0)
    return float(b + np.dot(w, z)), z


def predict_sampled(spec: ArchitectureSpec, params, X, n_shots: int, rng, threads: int = 1) -> np.ndarray:
    """Batch version of :func:`forward_sampled` drawing shot counts from ``rng``."""
    theta = _as_theta(spec, params)
    angles, w, b = split_theta(spec, theta)
    X = _check_features(spec, X)
    probs = compiled(spec).probabilities(angles, X, threads)
    counts = sample_counts(probs, n_shots, rng)
    return b + counts_to_z(counts, spec.n_qubits, n_shots) @ w
