"""Build a circuit, run it exactly and with shots, and differentiate it.

    python demos/01_circuit_basics.py
"""

import numpy as np

from qcover import analysis, circuits, gradients

spec = circuits.ArchitectureSpec("ZZXY", n_qubits=4, n_enc=2, n_var=1)
params = circuits.init_params(spec, rng_seed=0)
x = np.array([0.3, 1.2, 2.0, 2.9])

print(f"{spec.kind.value} with {spec.n_qubits} qubits has {circuits.param_count(spec)} parameters")
print("exact prediction      ", circuits.forward(spec, params, x))

rng = np.random.default_rng(1)
for shots in (10, 100, 10_000):
    estimate, _ = circuits.forward_sampled(spec, params, x, shots, rng)
    print(f"{shots:>6} shots estimate ", estimate,
          f"(shot-noise sd {np.sqrt(analysis.prediction_variance(spec, params, x, shots)):.4f})")

grad = gradients.grad_prediction(spec, params, x)
fd = gradients.finite_diff_grad(spec, params, x)
print("parameter-shift vs finite differences, max gap:", np.max(np.abs(grad - fd)))
