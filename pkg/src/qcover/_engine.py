"""Compiled batch simulator for gate programs.

A gate program (see :mod:`qcover.circuits`) is cut into maximal runs of gates of
one category:

* ``LOCAL``  single-qubit rotations and Hadamards, fused per qubit into 2x2 matrices
* ``DIAG``   ZZ rotations, fused into one phase vector
* ``PAIR_X`` / ``PAIR_Y``  commuting XX (or YY) rotations, applied pair by pair
* ``CNOT``   CNOT gates, applied in order

Parameter-shift states are produced exactly.  For a gate ``R(a) = exp(-i a/2 P)``
the shifted gate is ``R(a +- pi/2) = R(a) (1 -+ iP)/sqrt(2)``, so the final state
of the shifted circuit is ``(psi -+ i chi)/sqrt(2)`` with ``chi = B P psi_gate``,
``B`` the rest of the circuit.  One propagation of ``chi`` through the suffix
yields both shifted states.  Inside a fused segment the generator is moved to the
segment boundary: it commutes with every other gate of a DIAG/PAIR segment, and in
a LOCAL segment it becomes ``A P A^dagger`` with ``A`` the later gates on the same
qubit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numba import njit

# gate kinds
ROT, PAIR, CNOT, HADAMARD = 0, 1, 2, 3
# angle sources
SRC_PARAM, SRC_FEATURE, SRC_HONE, SRC_NONE = 0, 1, 2, 3
# segment kinds
SEG_LOCAL, SEG_DIAG, SEG_PAIR_X, SEG_PAIR_Y, SEG_CNOT = 0, 1, 2, 3, 4

_TWO_PI = 2.0 * math.pi


@njit(cache=True, fastmath=True)
def _gate_angles(g_src, g_idx, g_scale, theta, x):
    G = g_src.shape[0]
    out = np.zeros(G)
    for g in range(G):
        src = g_src[g]
        if src == SRC_PARAM:
            out[g] = g_scale[g] * theta[g_idx[g]]
        elif src == SRC_FEATURE:
            out[g] = g_scale[g] * x[g_idx[g]]
        elif src == SRC_HONE:
            i = g_idx[g]
            out[g] = g_scale[g] * x[i] * x[i + 1] / _TWO_PI
    return out


@njit(cache=True, fastmath=True)
def _rot_matrix(axis, angle, out):
    c = math.cos(0.5 * angle)
    s = math.sin(0.5 * angle)
    if axis == 0:
        out[0, 0] = c
        out[0, 1] = -1j * s
        out[1, 0] = -1j * s
        out[1, 1] = c
    elif axis == 1:
        out[0, 0] = c
        out[0, 1] = -s
        out[1, 0] = s
        out[1, 1] = c
    else:
        out[0, 0] = complex(c, -s)
        out[0, 1] = 0.0
        out[1, 0] = 0.0
        out[1, 1] = complex(c, s)


@njit(cache=True, fastmath=True)
def _mm2(a, b, out):
    # out = a @ b for 2x2 matrices; out may alias neither input
    out[0, 0] = a[0, 0] * b[0, 0] + a[0, 1] * b[1, 0]
    out[0, 1] = a[0, 0] * b[0, 1] + a[0, 1] * b[1, 1]
    out[1, 0] = a[1, 0] * b[0, 0] + a[1, 1] * b[1, 0]
    out[1, 1] = a[1, 0] * b[0, 1] + a[1, 1] * b[1, 1]


@njit(cache=True, fastmath=True)
def _pauli_matrix(axis, out):
    out[:, :] = 0.0
    if axis == 0:
        out[0, 1] = 1.0
        out[1, 0] = 1.0
    elif axis == 1:
        out[0, 1] = -1j
        out[1, 0] = 1j
    else:
        out[0, 0] = 1.0
        out[1, 1] = -1.0


# State arrays are split into real and imaginary planes of shape (2**n, capacity);
# column r is one state vector and kernels act on columns [0, rows).  Keeping the
# column index innermost lets every amplitude update run over contiguous memory.


@njit(cache=True, fastmath=True)
def _apply_1q(re, im, rows, b, u):
    dim = re.shape[0]
    m = 1 << b
    a00r, a00i = u[0, 0].real, u[0, 0].imag
    a01r, a01i = u[0, 1].real, u[0, 1].imag
    a10r, a10i = u[1, 0].real, u[1, 0].imag
    a11r, a11i = u[1, 1].real, u[1, 1].imag
    for hi in range(0, dim, 2 * m):
        for i0 in range(hi, hi + m):
            r0 = re[i0]
            m0 = im[i0]
            r1 = re[i0 + m]
            m1 = im[i0 + m]
            for r in range(rows):
                x0r = r0[r]
                x0i = m0[r]
                x1r = r1[r]
                x1i = m1[r]
                r0[r] = a00r * x0r - a00i * x0i + a01r * x1r - a01i * x1i
                m0[r] = a00r * x0i + a00i * x0r + a01r * x1i + a01i * x1r
                r1[r] = a10r * x0r - a10i * x0i + a11r * x1r - a11i * x1i
                m1[r] = a10r * x0i + a10i * x0r + a11r * x1i + a11i * x1r


@njit(cache=True, fastmath=True)
def _apply_diag(re, im, rows, d):
    dim = re.shape[0]
    for i in range(dim):
        dr = d[i].real
        di = d[i].imag
        ra = re[i]
        ma = im[i]
        for r in range(rows):
            xr = ra[r]
            xi = ma[r]
            ra[r] = xr * dr - xi * di
            ma[r] = xr * di + xi * dr


@njit(cache=True, fastmath=True)
def _apply_pair_rot(re, im, rows, b1, b2, axis, angle):
    # exp(-i angle/2 P_b1 P_b2) for P = X (axis 0) or Y (axis 1)
    dim = re.shape[0]
    c = math.cos(0.5 * angle)
    s = math.sin(0.5 * angle)
    m1 = 1 << b1
    m2 = 1 << b2
    mm = m1 | m2
    for i in range(dim):
        j = i ^ mm
        if i < j:
            ss = s
            if axis == 1 and ((i & m1) != 0) == ((i & m2) != 0):
                ss = -s
            ri = re[i]
            mi = im[i]
            rj = re[j]
            mj = im[j]
            for r in range(rows):
                xir = ri[r]
                xii = mi[r]
                xjr = rj[r]
                xji = mj[r]
                ri[r] = c * xir + ss * xji
                mi[r] = c * xii - ss * xjr
                rj[r] = c * xjr + ss * xii
                mj[r] = c * xji - ss * xir


@njit(cache=True, fastmath=True)
def _apply_cnot(re, im, rows, bc, bt):
    dim = re.shape[0]
    mc = 1 << bc
    mt = 1 << bt
    for i in range(dim):
        if (i & mc) != 0 and (i & mt) == 0:
            j = i | mt
            for r in range(rows):
                t = re[i, r]
                re[i, r] = re[j, r]
                re[j, r] = t
                t = im[i, r]
                im[i, r] = im[j, r]
                im[j, r] = t


@njit(cache=True, fastmath=True)
def _prepare_segments(g_kind, g_axis, g_b1, g_b2, seg_kind, seg_start, seg_end,
                      angles, n_qubits, gate_u, seg_mat, seg_has, seg_diag):
    """Gate matrices, fused per-qubit LOCAL matrices and DIAG phase vectors."""
    dim = seg_diag.shape[1]
    S = seg_kind.shape[0]
    h = 1.0 / math.sqrt(2.0)
    tmp = np.empty((2, 2), dtype=np.complex128)
    for s in range(S):
        k = seg_kind[s]
        if k == SEG_LOCAL:
            for q in range(n_qubits):
                seg_has[s, q] = False
                seg_mat[s, q, 0, 0] = 1.0
                seg_mat[s, q, 0, 1] = 0.0
                seg_mat[s, q, 1, 0] = 0.0
                seg_mat[s, q, 1, 1] = 1.0
            for g in range(seg_start[s], seg_end[s]):
                if g_kind[g] == HADAMARD:
                    gate_u[g, 0, 0] = h
                    gate_u[g, 0, 1] = h
                    gate_u[g, 1, 0] = h
                    gate_u[g, 1, 1] = -h
                else:
                    _rot_matrix(g_axis[g], angles[g], gate_u[g])
                b = g_b1[g]
                seg_has[s, b] = True
                _mm2(gate_u[g], seg_mat[s, b], tmp)
                seg_mat[s, b, :, :] = tmp
        elif k == SEG_DIAG:
            for i in range(dim):
                seg_diag[s, i] = 1.0
            for g in range(seg_start[s], seg_end[s]):
                m1 = 1 << g_b1[g]
                m2 = 1 << g_b2[g]
                c = math.cos(0.5 * angles[g])
                sn = math.sin(0.5 * angles[g])
                same = complex(c, -sn)
                diff = complex(c, sn)
                for i in range(dim):
                    if ((i & m1) != 0) == ((i & m2) != 0):
                        seg_diag[s, i] *= same
                    else:
                        seg_diag[s, i] *= diff


@njit(cache=True, fastmath=True)
def _apply_segment(re, im, rows, s, g_axis, g_b1, g_b2, seg_kind, seg_start, seg_end,
                   angles, n_qubits, seg_mat, seg_has, seg_diag):
    k = seg_kind[s]
    if k == SEG_LOCAL:
        for b in range(n_qubits):
            if seg_has[s, b]:
                _apply_1q(re, im, rows, b, seg_mat[s, b])
    elif k == SEG_DIAG:
        _apply_diag(re, im, rows, seg_diag[s])
    elif k == SEG_CNOT:
        for g in range(seg_start[s], seg_end[s]):
            _apply_cnot(re, im, rows, g_b1[g], g_b2[g])
    else:
        for g in range(seg_start[s], seg_end[s]):
            _apply_pair_rot(re, im, rows, g_b1[g], g_b2[g], g_axis[g], angles[g])


@njit(cache=True, nogil=True, fastmath=True)
def _run_forward(g_kind, g_axis, g_b1, g_b2, g_src, g_idx, g_scale,
                 seg_kind, seg_start, seg_end, n_qubits, theta, X, out_amps):
    B = X.shape[0]
    G = g_kind.shape[0]
    S = seg_kind.shape[0]
    dim = 1 << n_qubits
    gate_u = np.zeros((G, 2, 2), dtype=np.complex128)
    seg_mat = np.zeros((S, n_qubits, 2, 2), dtype=np.complex128)
    seg_has = np.zeros((S, n_qubits), dtype=np.bool_)
    seg_diag = np.ones((S, dim), dtype=np.complex128)
    re = np.zeros((dim, 1))
    im = np.zeros((dim, 1))
    for bi in range(B):
        angles = _gate_angles(g_src, g_idx, g_scale, theta, X[bi])
        _prepare_segments(g_kind, g_axis, g_b1, g_b2, seg_kind, seg_start, seg_end,
                          angles, n_qubits, gate_u, seg_mat, seg_has, seg_diag)
        re[:, 0] = 0.0
        im[:, 0] = 0.0
        re[0, 0] = 1.0
        for s in range(S):
            _apply_segment(re, im, 1, s, g_axis, g_b1, g_b2, seg_kind, seg_start,
                           seg_end, angles, n_qubits, seg_mat, seg_has, seg_diag)
        for i in range(dim):
            out_amps[bi, i] = complex(re[i, 0], im[i, 0])


@njit(cache=True, fastmath=True)
def _propagate_shifts(g_kind, g_axis, g_b1, g_b2, seg_kind, seg_start, seg_end, tg_gate,
                      tg_seg, n_qubits, angles, gate_u, seg_mat, seg_has, seg_diag,
                      psi_re, psi_im, chi_re, chi_im):
    """Forward pass of one sample plus every ``chi_j``.

    On return ``psi_re/psi_im`` (shape (S, dim)) hold the state after each
    segment and column ``j`` of ``chi_re/chi_im`` holds ``chi_j``.
    """
    S = seg_kind.shape[0]
    J = tg_gate.shape[0]
    dim = 1 << n_qubits
    re = np.zeros((dim, 1))
    im = np.zeros((dim, 1))
    row_re = np.zeros((dim, 1))
    row_im = np.zeros((dim, 1))
    pmat = np.zeros((2, 2), dtype=np.complex128)
    after = np.zeros((2, 2), dtype=np.complex128)
    q = np.zeros((2, 2), dtype=np.complex128)
    adag = np.zeros((2, 2), dtype=np.complex128)
    tmp = np.zeros((2, 2), dtype=np.complex128)
    _prepare_segments(g_kind, g_axis, g_b1, g_b2, seg_kind, seg_start, seg_end,
                      angles, n_qubits, gate_u, seg_mat, seg_has, seg_diag)
    re[0, 0] = 1.0
    for s in range(S):
        _apply_segment(re, im, 1, s, g_axis, g_b1, g_b2, seg_kind, seg_start,
                       seg_end, angles, n_qubits, seg_mat, seg_has, seg_diag)
        psi_re[s, :] = re[:, 0]
        psi_im[s, :] = im[:, 0]

    active = 0
    for s in range(S):
        if active > 0:
            _apply_segment(chi_re, chi_im, active, s, g_axis, g_b1, g_b2, seg_kind,
                           seg_start, seg_end, angles, n_qubits, seg_mat, seg_has,
                           seg_diag)
        while active < J and tg_seg[active] == s:
            g = tg_gate[active]
            k = seg_kind[s]
            if k == SEG_LOCAL:
                # generator moved past the later same-qubit gates of the segment
                b = g_b1[g]
                after[0, 0] = 1.0
                after[0, 1] = 0.0
                after[1, 0] = 0.0
                after[1, 1] = 1.0
                for h in range(g + 1, seg_end[s]):
                    if g_b1[h] == b:
                        _mm2(gate_u[h], after, tmp)
                        after[:, :] = tmp
                _pauli_matrix(g_axis[g], pmat)
                _mm2(after, pmat, tmp)
                for u in range(2):
                    for v in range(2):
                        adag[u, v] = np.conj(after[v, u])
                _mm2(tmp, adag, q)
                row_re[:, 0] = psi_re[s, :]
                row_im[:, 0] = psi_im[s, :]
                _apply_1q(row_re, row_im, 1, b, q)
                chi_re[:, active] = row_re[:, 0]
                chi_im[:, active] = row_im[:, 0]
            elif k == SEG_DIAG:
                m1 = 1 << g_b1[g]
                m2 = 1 << g_b2[g]
                for i in range(dim):
                    sign = 1.0
                    if ((i & m1) != 0) != ((i & m2) != 0):
                        sign = -1.0
                    chi_re[i, active] = sign * psi_re[s, i]
                    chi_im[i, active] = sign * psi_im[s, i]
            else:
                m1 = 1 << g_b1[g]
                m2 = 1 << g_b2[g]
                mm = m1 | m2
                for i in range(dim):
                    sign = 1.0
                    if k == SEG_PAIR_Y and ((i & m1) != 0) == ((i & m2) != 0):
                        sign = -1.0
                    chi_re[i, active] = sign * psi_re[s, i ^ mm]
                    chi_im[i, active] = sign * psi_im[s, i ^ mm]
            active += 1


@njit(cache=True, nogil=True, fastmath=True)
def _run_shifted(g_kind, g_axis, g_b1, g_b2, g_src, g_idx, g_scale,
                 seg_kind, seg_start, seg_end, tg_gate, tg_seg, n_qubits,
                 theta, X, out_p0, out_ps):
    B = X.shape[0]
    G = g_kind.shape[0]
    S = seg_kind.shape[0]
    J = tg_gate.shape[0]
    dim = 1 << n_qubits
    gate_u = np.zeros((G, 2, 2), dtype=np.complex128)
    seg_mat = np.zeros((S, n_qubits, 2, 2), dtype=np.complex128)
    seg_has = np.zeros((S, n_qubits), dtype=np.bool_)
    seg_diag = np.ones((S, dim), dtype=np.complex128)
    psi_re = np.zeros((S, dim))
    psi_im = np.zeros((S, dim))
    chi_re = np.zeros((dim, J))
    chi_im = np.zeros((dim, J))
    for bi in range(B):
        angles = _gate_angles(g_src, g_idx, g_scale, theta, X[bi])
        _propagate_shifts(g_kind, g_axis, g_b1, g_b2, seg_kind, seg_start, seg_end, tg_gate,
                          tg_seg, n_qubits, angles, gate_u, seg_mat, seg_has, seg_diag,
                          psi_re, psi_im, chi_re, chi_im)
        for i in range(dim):
            pr = psi_re[S - 1, i]
            pi = psi_im[S - 1, i]
            out_p0[bi, i] = pr * pr + pi * pi
            for j in range(J):
                # -i chi = (chi_im, -chi_re)
                cr = chi_im[i, j]
                ci = -chi_re[i, j]
                out_ps[bi, j, 0, i] = 0.5 * ((pr + cr) ** 2 + (pi + ci) ** 2)
                out_ps[bi, j, 1, i] = 0.5 * ((pr - cr) ** 2 + (pi - ci) ** 2)


@njit(cache=True, nogil=True, fastmath=True)
def _run_shifted_obs(g_kind, g_axis, g_b1, g_b2, g_src, g_idx, g_scale,
                     seg_kind, seg_start, seg_end, tg_gate, tg_seg, n_qubits,
                     theta, X, obs, out_p0, out_ev):
    # out_ev[b, j, 0/1, o]: expectation of diagonal observable o in the +/- shifted circuit
    B = X.shape[0]
    G = g_kind.shape[0]
    S = seg_kind.shape[0]
    J = tg_gate.shape[0]
    O = obs.shape[0]
    dim = 1 << n_qubits
    gate_u = np.zeros((G, 2, 2), dtype=np.complex128)
    seg_mat = np.zeros((S, n_qubits, 2, 2), dtype=np.complex128)
    seg_has = np.zeros((S, n_qubits), dtype=np.bool_)
    seg_diag = np.ones((S, dim), dtype=np.complex128)
    psi_re = np.zeros((S, dim))
    psi_im = np.zeros((S, dim))
    chi_re = np.zeros((dim, J))
    chi_im = np.zeros((dim, J))
    acc = np.zeros((J, 2, O))
    for bi in range(B):
        angles = _gate_angles(g_src, g_idx, g_scale, theta, X[bi])
        _propagate_shifts(g_kind, g_axis, g_b1, g_b2, seg_kind, seg_start, seg_end, tg_gate,
                          tg_seg, n_qubits, angles, gate_u, seg_mat, seg_has, seg_diag,
                          psi_re, psi_im, chi_re, chi_im)
        acc[:, :, :] = 0.0
        for i in range(dim):
            pr = psi_re[S - 1, i]
            pi = psi_im[S - 1, i]
            out_p0[bi, i] = pr * pr + pi * pi
            for j in range(J):
                cr = chi_im[i, j]
                ci = -chi_re[i, j]
                plus = (pr + cr) ** 2 + (pi + ci) ** 2
                minus = (pr - cr) ** 2 + (pi - ci) ** 2
                for o in range(O):
                    acc[j, 0, o] += obs[o, i] * plus
                    acc[j, 1, o] += obs[o, i] * minus
        for j in range(J):
            for o in range(O):
                out_ev[bi, j, 0, o] = 0.5 * acc[j, 0, o]
                out_ev[bi, j, 1, o] = 0.5 * acc[j, 1, o]


class CompiledCircuit:
    """Array form of a gate program plus its segmentation.

    ``gates`` is a sequence of objects with attributes ``kind`` ('rot', 'pair',
    'cnot', 'h'), ``axis``, ``qubits``, ``source`` ('param', 'feature', 'hone',
    'none'), ``index`` and ``scale``.
    """

    def __init__(self, n_qubits: int, gates, n_angles: int):
        self.n_qubits = n_qubits
        self.dim = 1 << n_qubits
        self.n_angles = n_angles
        kinds = {"rot": ROT, "pair": PAIR, "cnot": CNOT, "h": HADAMARD}
        sources = {"param": SRC_PARAM, "feature": SRC_FEATURE, "hone": SRC_HONE, "none": SRC_NONE}
        axes = {"x": 0, "y": 1, "z": 2, None: 0}
        G = len(gates)
        self.g_kind = np.array([kinds[g.kind] for g in gates], dtype=np.int64)
        self.g_axis = np.array([axes[g.axis] for g in gates], dtype=np.int64)
        b1, b2 = [], []
        for g in gates:
            qs = g.qubits
            b1.append(n_qubits - 1 - qs[0])
            b2.append(n_qubits - 1 - qs[1] if len(qs) > 1 else -1)
        self.g_b1 = np.array(b1, dtype=np.int64)
        self.g_b2 = np.array(b2, dtype=np.int64)
        self.g_src = np.array([sources[g.source] for g in gates], dtype=np.int64)
        self.g_idx = np.array([g.index for g in gates], dtype=np.int64)
        self.g_scale = np.array([g.scale for g in gates], dtype=np.float64)

        def category(g):
            if g.kind in ("rot", "h"):
                return SEG_LOCAL
            if g.kind == "cnot":
                return SEG_CNOT
            return {"z": SEG_DIAG, "x": SEG_PAIR_X, "y": SEG_PAIR_Y}[g.axis]

        seg_kind, seg_start, seg_end = [], [], []
        gate_seg = np.zeros(G, dtype=np.int64)
        for i, g in enumerate(gates):
            c = category(g)
            if not seg_kind or seg_kind[-1] != c:
                seg_kind.append(c)
                seg_start.append(i)
                seg_end.append(i)
            seg_end[-1] = i + 1
            gate_seg[i] = len(seg_kind) - 1
        self.seg_kind = np.array(seg_kind, dtype=np.int64)
        self.seg_start = np.array(seg_start, dtype=np.int64)
        self.seg_end = np.array(seg_end, dtype=np.int64)

        trainable = np.flatnonzero(self.g_src == SRC_PARAM)
        self.tg_gate = trainable.astype(np.int64)
        self.tg_seg = gate_seg[trainable]
        self.tg_param = self.g_idx[trainable]
        self.tg_coef = self.g_scale[trainable]
        # chain-rule matrix: d/d(angle k) = sum_j coef_j * d/d(local angle of gate j)
        self.chain = np.zeros((trainable.size, n_angles))
        self.chain[np.arange(trainable.size), self.tg_param] = self.tg_coef

    @property
    def n_shift_gates(self) -> int:
        return int(self.tg_gate.size)

    def _args(self):
        return (self.g_kind, self.g_axis, self.g_b1, self.g_b2, self.g_src, self.g_idx,
                self.g_scale, self.seg_kind, self.seg_start, self.seg_end)

    def amplitudes(self, theta, X, threads: int = 1) -> np.ndarray:
        """Final state amplitudes for every row of ``X``; shape ``(B, 2**n)``."""
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        out = np.empty((X.shape[0], self.dim), dtype=np.complex128)

        def work(lo, hi):
            _run_forward(*self._args(), self.n_qubits, theta, X[lo:hi], out[lo:hi])

        _chunked(work, X.shape[0], threads)
        return out

    def probabilities(self, theta, X, threads: int = 1) -> np.ndarray:
        amps = self.amplitudes(theta, X, threads)
        return amps.real**2 + amps.imag**2

    def shifted_probabilities(self, theta, X, threads: int = 1):
        """Born probabilities of the circuit and of every +-pi/2 shifted circuit.

        Returns ``(p0, ps)`` with ``p0`` of shape ``(B, 2**n)`` and ``ps`` of shape
        ``(B, J, 2, 2**n)``; ``ps[:, j, 0]`` is the +pi/2 shift of trainable gate
        ``j`` and ``ps[:, j, 1]`` the -pi/2 shift.
        """
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        B = X.shape[0]
        p0 = np.empty((B, self.dim))
        ps = np.empty((B, self.n_shift_gates, 2, self.dim))

        def work(lo, hi):
            _run_shifted(*self._args(), self.tg_gate, self.tg_seg, self.n_qubits,
                         theta, X[lo:hi], p0[lo:hi], ps[lo:hi])

        _chunked(work, B, threads)
        return p0, ps

    def shifted_expectations(self, theta, X, observables, threads: int = 1):
        """Like :meth:`shifted_probabilities` but reduced to diagonal observables.

        ``observables`` has shape ``(O, 2**n)`` (values on the basis states).
        Returns ``(p0, ev)`` with ``ev`` of shape ``(B, J, 2, O)``.
        """
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        obs = np.ascontiguousarray(np.atleast_2d(observables), dtype=np.float64)
        B = X.shape[0]
        p0 = np.empty((B, self.dim))
        ev = np.empty((B, self.n_shift_gates, 2, obs.shape[0]))

        def work(lo, hi):
            _run_shifted_obs(*self._args(), self.tg_gate, self.tg_seg, self.n_qubits,
                             theta, X[lo:hi], obs, p0[lo:hi], ev[lo:hi])

        _chunked(work, B, threads)
        return p0, ev


def _chunked(work, n: int, threads: int) -> None:
    if threads <= 1 or n < 2 * threads:
        work(0, n)
        return
    bounds = np.linspace(0, n, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(work, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
        for f in futures:
            f.result()
