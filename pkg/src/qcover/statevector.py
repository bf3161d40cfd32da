"""Dense state-vector simulator with the small gate set used by the QNN circuits.

Qubit convention
----------------
Qubits are addressed with 0-based indices ``q = 0 .. n_qubits - 1``; qubit ``q``
is qubit ``q + 1`` in the usual 1-based circuit notation.  Qubit 0 is the most
significant bit of the basis index, i.e. basis state ``|b_0 b_1 ... b_{n-1}>``
sits at index ``sum_q b_q * 2**(n - 1 - q)``.  :func:`bit_position` is the single
place where this mapping is defined.

All gate functions update ``state.amplitudes`` in place and return the state so
calls can be chained.  Every kernel touches only the amplitude pairs (or
quadruples) selected by bit masks; no operator matrix is ever built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_QUBITS = 20

AXES = ("x", "y", "z")


def bit_position(n_qubits: int, qubit: int) -> int:
    """Bit of the basis index that stores ``qubit`` (qubit 0 is the MSB)."""
    return n_qubits - 1 - qubit


@dataclass
class Statevector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise ValueError(
                f"expected {1 << self.n_qubits} amplitudes for {self.n_qubits} qubits, "
                f"got shape {self.amplitudes.shape}"
            )

    def copy(self) -> "Statevector":
        return Statevector(self.n_qubits, self.amplitudes.copy())

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm_squared(self) -> float:
        return float(np.sum(self.probabilities()))


def zero_state(n_qubits: int) -> Statevector:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"n_qubits must be an integer in [1, {MAX_QUBITS}], got {n_qubits!r}")
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return Statevector(int(n_qubits), amps)


def _check_qubit(state: Statevector, qubit: int) -> None:
    if not 0 <= qubit < state.n_qubits:
        raise ValueError(f"qubit index {qubit} out of range for {state.n_qubits} qubits")


def _check_pair(state: Statevector, q1: int, q2: int) -> None:
    _check_qubit(state, q1)
    _check_qubit(state, q2)
    if q1 == q2:
        raise ValueError(f"two-qubit gate needs distinct qubits, got {q1} twice")


def _check_angle(angle: float) -> float:
    angle = float(angle)
    if not math.isfinite(angle):
        raise ValueError(f"rotation angle must be finite, got {angle}")
    return angle


def _split(state: Statevector, qubit: int) -> np.ndarray:
    # view with axis 1 holding the bit of `qubit`
    n = state.n_qubits
    return state.amplitudes.reshape(1 << qubit, 2, 1 << (n - 1 - qubit))


def apply_matrix_1q(state: Statevector, qubit: int, matrix: np.ndarray) -> Statevector:
    """Apply an arbitrary 2x2 matrix to one qubit."""
    _check_qubit(state, qubit)
    view = _split(state, qubit)
    a0 = view[:, 0, :].copy()
    a1 = view[:, 1, :]
    view[:, 0, :] = matrix[0, 0] * a0 + matrix[0, 1] * a1
    view[:, 1, :] = matrix[1, 0] * a0 + matrix[1, 1] * a1
    return state


def rotation_matrix(axis: str, angle: float) -> np.ndarray:
    """``exp(-i angle/2 sigma^axis)`` as a 2x2 array."""
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    if axis == "x":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if axis == "y":
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if axis == "z":
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]])
    raise ValueError(f"axis must be one of {AXES}, got {axis!r}")


def apply_rot(state: Statevector, axis: str, qubit: int, angle: float) -> Statevector:
    angle = _check_angle(angle)
    return apply_matrix_1q(state, qubit, rotation_matrix(axis, angle))


def apply_hadamard(state: Statevector, qubit: int) -> Statevector:
    h = 1 / math.sqrt(2)
    return apply_matrix_1q(state, qubit, np.array([[h, h], [h, -h]]))


def _pair_indices(n: int, q1: int, q2: int):
    """Index arrays of the basis states grouped by the bits of q1 and q2.

    Returns ``idx[b1][b2]``: indices whose q1 bit is b1 and q2 bit is b2,
    aligned so that entry k of each array differs only in those two bits.
    """
    m1 = 1 << bit_position(n, q1)
    m2 = 1 << bit_position(n, q2)
    base = np.arange(1 << n)
    base = base[(base & m1 == 0) & (base & m2 == 0)]
    return ((base, base | m2), (base | m1, base | m1 | m2))


def apply_two_pauli_rot(state: Statevector, axis: str, q1: int, q2: int, angle: float) -> Statevector:
    """``exp(-i angle/2 sigma^axis_q1 sigma^axis_q2)``."""
    _check_pair(state, q1, q2)
    angle = _check_angle(angle)
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    (i00, i01), (i10, i11) = _pair_indices(state.n_qubits, q1, q2)
    a = state.amplitudes
    if axis == "z":
        same = np.concatenate([i00, i11])
        diff = np.concatenate([i01, i10])
        a[same] *= complex(c, -s)
        a[diff] *= complex(c, s)
        return state
    # XX maps |b1 b2> -> |~b1 ~b2>; YY does the same with sign -1 when b1 == b2
    sign_same = 1.0 if axis == "x" else -1.0
    sign_diff = 1.0
    for (u, v), sign in (((i00, i11), sign_same), ((i01, i10), sign_diff)):
        au = a[u].copy()
        av = a[v]
        a[u] = c * au - 1j * s * sign * av
        a[v] = c * av - 1j * s * sign * au
    return state


def apply_cnot(state: Statevector, control: int, target: int) -> Statevector:
    _check_pair(state, control, target)
    (_, _), (i10, i11) = _pair_indices(state.n_qubits, control, target)
    a = state.amplitudes
    a[i10], a[i11] = a[i11].copy(), a[i10].copy()
    return state


def ions_pairs(n_qubits: int):
    """``(q1, q2, coefficient)`` for every pair of the long-range XX coupling."""
    return [(n, m, 1.0 / (m - n)) for n in range(n_qubits) for m in range(n + 1, n_qubits)]


def apply_ions_coupling(state: Statevector, angle: float) -> Statevector:
    """``exp(-i angle/2 sum_{n<m} X_n X_m / (m - n))``.

    The terms commute, so the exponential factorises exactly into one XX
    rotation per pair with angle ``angle / (m - n)``.
    """
    if state.n_qubits < 2:
        raise ValueError("the ion coupling needs at least 2 qubits")
    angle = _check_angle(angle)
    for q1, q2, coef in ions_pairs(state.n_qubits):
        apply_two_pauli_rot(state, "x", q1, q2, angle * coef)
    return state


def z_signs(n_qubits: int) -> np.ndarray:
    """``(2**n, n)`` table of sigma^z eigenvalues: +1 where the qubit bit is 0."""
    idx = np.arange(1 << n_qubits)[:, None]
    bits = (idx >> (n_qubits - 1 - np.arange(n_qubits))[None, :]) & 1
    return 1 - 2 * bits


def expectation_z(state: Statevector, qubit: int) -> float:
    _check_qubit(state, qubit)
    signs = z_signs(state.n_qubits)[:, qubit]
    return float(state.probabilities() @ signs)


def expectation_zz(state: Statevector, q1: int, q2: int) -> float:
    """``<Z_q1 Z_q2>``; equals 1 when ``q1 == q2`` (Z squared is the identity).

    Covariance diagonals should use ``1 - <Z_q>**2`` instead of this value.
    """
    _check_qubit(state, q1)
    _check_qubit(state, q2)
    z = z_signs(state.n_qubits)
    return float(state.probabilities() @ (z[:, q1] * z[:, q2]))


def sample_bitstrings(state: Statevector, n_shots: int, rng_seed) -> np.ndarray:
    """Draw ``n_shots`` measurement outcomes from the Born distribution.

    Returns an ``(n_shots, n_qubits)`` int8 array with entries +1 (bit 0) or -1
    (bit 1), one row per measured bit-string.
    """
    if n_shots < 1:
        raise ValueError(f"n_shots must be >= 1, got {n_shots}")
    rng = np.random.default_rng(rng_seed)
    p = state.probabilities()
    p = p / p.sum()
    outcomes = rng.choice(p.size, size=n_shots, p=p)
    return z_signs(state.n_qubits)[outcomes].astype(np.int8)
