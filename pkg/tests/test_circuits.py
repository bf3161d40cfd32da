import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qcover import circuits as qc
from qcover import statevector as sv
from qcover.circuits import ArchitectureKind, ArchitectureSpec, ParameterSet

from .oracles import dense_circuit_state, dense_forward

KINDS = [k.value for k in ArchitectureKind]


def random_instance(spec, seed):
    rng = np.random.default_rng(seed)
    theta = np.concatenate([rng.uniform(0, 2 * math.pi, spec.n_angles),
                            rng.uniform(-1, 1, spec.n_qubits), rng.uniform(-1, 1, 1)])
    return theta, rng.uniform(0, math.pi, spec.n_qubits)


@pytest.mark.parametrize("kind,n,enc,var,count", [
    ("XYZ", 8, 5, 3, 201), ("ZZXY", 8, 2, 7, 200), ("XYZ", 6, 4, 2, 109), ("ZZXY", 6, 2, 5, 114),
])
def test_param_count_reference_rows(kind, n, enc, var, count):
    assert qc.param_count(ArchitectureSpec(kind, n, enc, var)) == count


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", range(2, 9))
def test_param_count_matches_consumed_angles(kind, n):
    spec = ArchitectureSpec(kind, n, 2, 2)
    used = {g.index for g in qc.circuit_gates(spec) if g.source == "param"}
    assert used == set(range(spec.n_angles))
    assert qc.param_count(spec) == len(used) + n + 1


def test_block_sizes_table():
    assert qc.block_sizes("XYZ", 5) == (12, 17)
    assert qc.block_sizes("ZZXY", 5) == (9, 14)
    assert qc.block_sizes("CNOT_NN", 5) == (10, 15)
    assert qc.block_sizes("IONS", 5) == (6, 16)


class TestSpecValidation:
    def test_hone_only_for_cnot_kinds(self):
        ArchitectureSpec("CNOT_PBC", 3, 1, 1, hone_encoding=True)
        with pytest.raises(ValueError):
            ArchitectureSpec("ZZXY", 3, 1, 1, hone_encoding=True)

    @pytest.mark.parametrize("args", [("XYZ", 1, 1, 1), ("XYZ", 3, 0, 1), ("XYZ", 3, 1, -1), ("ABC", 3, 1, 1)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            ArchitectureSpec(*args)


class TestParameterSet:
    def test_init_is_deterministic(self):
        spec = ArchitectureSpec("ZZXY", 4, 2, 3)
        a, b = qc.init_params(spec, 7), qc.init_params(spec, 7)
        assert np.array_equal(a.to_flat(), b.to_flat())

    def test_init_ranges(self):
        spec = ArchitectureSpec("XYZ", 5, 2, 2)
        p = qc.init_params(spec, 3)
        p.check(spec)
        flat = p.to_flat()
        assert flat.size == qc.param_count(spec)
        assert np.all((flat[:spec.n_angles] >= 0) & (flat[:spec.n_angles] < 2 * math.pi))
        assert np.all(np.abs(p.weights) <= 1 / 5)
        assert p.bias == 0.5

    def test_flat_round_trip(self):
        spec = ArchitectureSpec("IONS", 3, 2, 1)
        theta, _ = random_instance(spec, 0)
        assert np.array_equal(ParameterSet.from_flat(spec, theta).to_flat(), theta)

    def test_json_round_trip_is_exact(self):
        spec = ArchitectureSpec("CNOT_NN", 3, 2, 1, hone_encoding=True)
        p = ParameterSet.from_flat(spec, random_instance(spec, 1)[0])
        text = qc.params_to_json(spec, p)
        spec2, p2 = qc.params_from_json(text)
        assert spec2 == spec and np.array_equal(p2.to_flat(), p.to_flat())
        assert set(json.loads(text)) >= {"kind", "N", "n_enc", "n_var", "enc_blocks", "var_blocks", "weights", "bias"}

    def test_wrong_block_size(self):
        spec = ArchitectureSpec("ZZXY", 3, 1, 1)
        p = qc.init_params(spec, 0)
        bad = ParameterSet((p.enc_blocks[0][:-1],), p.var_blocks, p.weights, p.bias)
        with pytest.raises(ValueError):
            qc.forward(spec, bad, np.zeros(3))


class TestEncoding:
    def test_zero_features_leave_state(self):
        spec = ArchitectureSpec("XYZ", 3, 1, 0)
        s = sv.zero_state(3)
        qc.encode_layer(s, spec, np.zeros(3))
        assert np.allclose(s.amplitudes, sv.zero_state(3).amplitudes)

    def test_hone_extra_angle(self):
        spec = ArchitectureSpec("CNOT_PBC", 2, 1, 0, hone_encoding=True)
        layer = qc._encoding_layer(spec)
        hone = [g for g in layer if g.source == "hone"]
        assert len(hone) == 1 and hone[0].qubits == (0,)
        assert qc.gate_angle(hone[0], None, np.array([math.pi, math.pi])) == pytest.approx(math.pi / 2)

    def test_ions_rz_encoding_on_plus_state(self):
        spec = ArchitectureSpec("IONS", 2, 1, 0)
        s = sv.apply_hadamard(sv.apply_hadamard(sv.zero_state(2), 0), 1)
        before = s.amplitudes.copy()
        qc.encode_layer(s, spec, np.zeros(2))
        assert np.allclose(s.amplitudes, before)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            qc.forward(ArchitectureSpec("ZZXY", 3, 1, 0), np.zeros(qc.param_count(ArchitectureSpec("ZZXY", 3, 1, 0))),
                       np.zeros(4))

    def test_out_of_range_feature_warns(self):
        spec = ArchitectureSpec("ZZXY", 2, 1, 0)
        with pytest.warns(RuntimeWarning):
            qc.forward(spec, qc.init_params(spec, 0), np.array([4.0, 0.0]))


class TestForward:
    @pytest.mark.parametrize("kind", ["XYZ", "ZZXY", "CNOT_PBC", "CNOT_NN"])
    def test_zero_weights_give_bias(self, kind):
        spec = ArchitectureSpec(kind, 3, 2, 1)
        theta = np.zeros(qc.param_count(spec))
        theta[-1] = 0.37
        assert qc.forward(spec, theta, np.array([0.3, 1.0, 2.0])) == pytest.approx(0.37, abs=1e-14)

    @given(st.floats(0, math.pi))
    def test_zzxy_two_qubit_closed_form(self, t):
        spec = ArchitectureSpec("ZZXY", 2, 1, 0)
        theta = np.zeros(qc.param_count(spec))
        theta[spec.n_angles] = 1.0
        assert qc.forward(spec, theta, np.array([t, 0.0])) == pytest.approx(math.cos(t), abs=1e-12)

    @pytest.mark.parametrize("kind", ["XYZ", "ZZXY"])
    def test_product_state_closed_form(self, kind):
        spec = ArchitectureSpec(kind, 4, 1, 0)
        rng = np.random.default_rng(0)
        x = rng.uniform(0, math.pi, 4)
        w = rng.uniform(-1, 1, 4)
        theta = np.concatenate([np.zeros(spec.n_angles), w, [0.2]])
        assert abs(qc.forward(spec, theta, x) - (0.2 + w @ np.cos(x))) <= 1e-10

    @pytest.mark.parametrize("kind", KINDS)
    def test_fast_path_matches_reference(self, kind):
        spec = ArchitectureSpec(kind, 4, 2, 2, hone_encoding=kind.startswith("CNOT"))
        for seed in range(3):
            theta, x = random_instance(spec, seed)
            assert abs(qc.forward(spec, theta, x) - qc.forward_reference(spec, theta, x)) <= 1e-12

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("n", [2, 3])
    def test_dense_oracle(self, kind, n):
        hone = kind.startswith("CNOT")
        spec = ArchitectureSpec(kind, n, 2, 2, hone_encoding=hone)
        theta, x = random_instance(spec, n)
        expected = dense_circuit_state(kind, n, 2, 2, theta[:spec.n_angles], x, hone)
        got = qc.output_state(spec, theta, x).amplitudes
        assert np.max(np.abs(got - expected)) <= 1e-10
        assert abs(qc.forward(spec, theta, x) - dense_forward(kind, n, 2, 2, theta, x, hone)) <= 1e-10

    @pytest.mark.parametrize("kind", KINDS)
    def test_two_pi_periodicity(self, kind):
        spec = ArchitectureSpec(kind, 3, 2, 1)
        theta, x = random_instance(spec, 5)
        f0 = qc.forward(spec, theta, x)
        # the ion coupling scales its angle by 1/(m-n), so that angle repeats only after 2pi*lcm(1..N-1)
        collective = {g.index for g in qc.circuit_gates(spec) if g.source == "param" and g.scale != 1.0}
        period = np.full(spec.n_angles, 2 * math.pi)
        period[list(collective)] *= math.lcm(*range(1, spec.n_qubits))
        shifted = np.repeat(theta[None], spec.n_angles, axis=0)
        shifted[np.arange(spec.n_angles), np.arange(spec.n_angles)] += period
        f = [qc.forward(spec, s, x) for s in shifted]
        assert np.max(np.abs(np.array(f) - f0)) <= 1e-9

    def test_four_pi_shift_is_identity_on_state(self):
        spec = ArchitectureSpec("XYZ", 3, 1, 1)
        theta, x = random_instance(spec, 6)
        a = qc.output_state(spec, theta, x).amplitudes
        theta[4] += 4 * math.pi
        assert np.allclose(qc.output_state(spec, theta, x).amplitudes, a, atol=1e-12)

    def test_output_bound(self):
        rng = np.random.default_rng(1)
        for i in range(1000):
            kind = KINDS[i % 5]
            spec = ArchitectureSpec(kind, int(rng.integers(2, 5)), 1, int(rng.integers(0, 2)))
            theta, x = random_instance(spec, i)
            f = qc.forward(spec, theta, x)
            w, b = theta[spec.n_angles:-1], theta[-1]
            assert b - np.abs(w).sum() - 1e-12 <= f <= b + np.abs(w).sum() + 1e-12

    def test_batch_matches_single(self):
        spec = ArchitectureSpec("ZZXY", 4, 2, 2)
        theta, _ = random_instance(spec, 2)
        X = np.random.default_rng(3).uniform(0, math.pi, (7, 4))
        assert np.allclose(qc.predict(spec, theta, X), [qc.forward(spec, theta, x) for x in X], atol=1e-14)

    def test_threads_do_not_change_result(self):
        spec = ArchitectureSpec("XYZ", 4, 2, 1)
        theta, _ = random_instance(spec, 4)
        X = np.random.default_rng(4).uniform(0, math.pi, (33, 4))
        assert np.array_equal(qc.predict(spec, theta, X, threads=1), qc.predict(spec, theta, X, threads=3))


class TestSampled:
    def test_zero_weights_exact_bias(self):
        spec = ArchitectureSpec("ZZXY", 3, 1, 1)
        theta, x = random_instance(spec, 0)
        theta[spec.n_angles:-1] = 0
        assert qc.forward_sampled(spec, theta, x, 7, 0)[0] == theta[-1]

    def test_deterministic(self):
        spec = ArchitectureSpec("ZZXY", 3, 1, 1)
        theta, x = random_instance(spec, 1)
        assert qc.forward_sampled(spec, theta, x, 50, 9)[0] == qc.forward_sampled(spec, theta, x, 50, 9)[0]

    def test_converges_within_clt_band(self):
        from qcover.analysis import prediction_variance

        spec = ArchitectureSpec("ZZXY", 4, 2, 1)
        theta, x = random_instance(spec, 2)
        n = 10**6
        est, z = qc.forward_sampled(spec, theta, x, n, 3)
        se = math.sqrt(prediction_variance(spec, theta, x, n))
        assert abs(est - qc.forward(spec, theta, x)) <= 4 * se
        assert z.shape == (4,)

    def test_shared_shots(self):
        # Rx(pi/2) on qubit 0 then CNOT(0 -> 1): outcomes agree shot by shot
        spec = ArchitectureSpec("CNOT_NN", 2, 1, 0)
        theta = np.zeros(qc.param_count(spec))
        _, z = qc.forward_sampled(spec, theta, np.array([math.pi / 2, 0.0]), 1001, 4)
        assert z[0] == z[1]

    def test_rejects_zero_shots(self):
        spec = ArchitectureSpec("ZZXY", 2, 1, 0)
        with pytest.raises(ValueError):
            qc.forward_sampled(spec, qc.init_params(spec, 0), np.zeros(2), 0, 0)


def test_no_warning_inside_range():
    spec = ArchitectureSpec("ZZXY", 2, 1, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        qc.forward(spec, qc.init_params(spec, 0), np.array([0.0, math.pi]))
