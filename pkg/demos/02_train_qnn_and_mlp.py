"""Train a small QNN and a parameter-matched MLP on synthetic cloud-cover data.

    python demos/02_train_qnn_and_mlp.py      # a few seconds on one core
"""

import numpy as np

from qcover import analysis, datapipe, training
from qcover.circuits import ArchitectureSpec
from qcover.classical_nn import MlpSpec

raw = datapipe.generate_synthetic(3000, rng_seed=0)
print(f"{len(raw)} cloudy samples; Xu-Randall fit:", datapipe.fit_xu_randall(raw))
train_set, test_set = datapipe.train_test_split(datapipe.assemble(raw, datapipe.FEATURES_6), 1 / 6, 0)

models = {
    "QNN ZZXY(6; 2, 5)": training.QnnModel(ArchitectureSpec("ZZXY", 6, 2, 5)),
    "MLP [6, 8, 3, 7, 1]": training.MlpModel(MlpSpec((6, 8, 3, 7, 1))),
}
config = training.TrainConfig(epochs=15, learning_rate=0.003, eval_every=5)
mean_only = np.mean((train_set.y.mean() - test_set.y) ** 2)
print(f"constant-mean predictor test MSE: {mean_only:.4f}")
for name, model in models.items():
    rec = training.train(model, train_set, config, test_set)
    report = analysis.clc_metrics(model.predict(rec.final_params, test_set.X), test_set.y)
    print(f"{name}: {model.n_params} params, test MSE {rec.test_mse[-1]:.4f}, "
          f"cloud-cover R2 {report.r2:.3f}, Hellinger {report.hellinger:.3f}, {rec.wall_time:.0f} s")
