"""Variance regularization: trade a little accuracy for predictions that need fewer shots.

    python demos/03_shot_noise_regularization.py      # a few seconds on one core
"""

from qcover import datapipe, training
from qcover.circuits import ArchitectureSpec

ds = datapipe.assemble(datapipe.generate_synthetic(1000, rng_seed=0), datapipe.FEATURES_6)
model = training.QnnModel(ArchitectureSpec("ZZXY", 6, 1, 2))

print("lambda   train MSE   single-shot MPV   MPV at 100 shots")
for lam in (0.0, 0.01, 0.05):
    rec = training.train(model, ds, training.TrainConfig(epochs=10, learning_rate=0.005, lam=lam, eval_every=10))
    mse, mpv = rec.train_mse[-1], rec.train_mpv[-1]
    print(f"{lam:<8g} {mse:<11.4f} {mpv:<17.4f} {mpv / 100:.5f}")

# the same objective under simulated measurement: every step samples 100 shots per circuit
rec = training.train(model, ds, training.TrainConfig(epochs=3, n_shots=100, lam=0.005, eval_every=3))
print("shot-mode epoch losses:", [round(v, 4) for v in rec.train_loss])
