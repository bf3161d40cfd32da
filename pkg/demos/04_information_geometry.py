"""Fisher information spectra and normalized effective dimension, QNN vs MLP.

    python demos/04_information_geometry.py
"""

import numpy as np

from qcover import analysis, datapipe, training
from qcover.circuits import ArchitectureSpec
from qcover.classical_nn import MlpSpec

X = datapipe.assemble(datapipe.generate_synthetic(300, rng_seed=0), datapipe.FEATURES_6).X[:200]
for name, model in (("QNN", training.QnnModel(ArchitectureSpec("ZZXY", 6, 2, 5))),
                    ("MLP", training.MlpModel(MlpSpec((6, 8, 3, 7, 1))))):
    ens = analysis.effective_dimension(model, X, n_draws=50, n_data=1e5, rng_seed=0)
    spectra = ens.spectra()
    near_zero = np.mean(spectra < 1e-3 * spectra.max(axis=1, keepdims=True))
    print(f"{name}: D={model.n_params}, effective dimension {ens.effective_dimension:.3f}, "
          f"largest normalized eigenvalue {spectra[:, 0].mean():.1f}, "
          f"fraction of near-zero eigenvalues {near_zero:.2f}")
