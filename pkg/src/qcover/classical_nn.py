"""Fully-connected regression network with hand-written backpropagation.

Parameters travel as one flat vector (layer by layer: weight matrix row-major,
then bias) so the same optimizer and analysis code serve both model families.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

LEAKY_SLOPE = 0.01
ACTIVATIONS = ("tanh", "leaky_relu")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    activations: tuple = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or sizes[-1] != 1 or min(sizes) < 1:
            raise ValueError(f"layer sizes must run from the input width to 1, got {sizes}")
        acts = self.activations
        if acts is None:
            acts = ("tanh",) * (len(sizes) - 2)
        acts = tuple(acts)
        if len(acts) != len(sizes) - 2:
            raise ValueError(f"need {len(sizes) - 2} hidden activations, got {len(acts)}")
        bad = [a for a in acts if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activation(s) {bad}")
        object.__setattr__(self, "activations", acts)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def label(self) -> str:
        hidden = ",".join(str(s) for s in self.layer_sizes[1:-1])
        return f"NN^{self.n_inputs}_{hidden}"


def mlp_param_count(spec: MlpSpec) -> int:
    s = spec.layer_sizes
    return sum(a * b + b for a, b in zip(s[:-1], s[1:]))


def unpack(spec: MlpSpec, theta) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``[(W, c), ...]`` into the flat vector; ``W`` has shape (in, out)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (mlp_param_count(spec),):
        raise ValueError(f"expected {mlp_param_count(spec)} parameters, got shape {theta.shape}")
    layers, off = [], 0
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        W = theta[off:off + a * b].reshape(a, b)
        off += a * b
        layers.append((W, theta[off:off + b]))
        off += b
    return layers


def init_mlp(spec: MlpSpec, rng_seed) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng_seed)
    parts = []
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        lim = np.sqrt(6.0 / (a + b))
        parts += [rng.uniform(-lim, lim, a * b), np.zeros(b)]
    return np.concatenate(parts)


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a**2
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def _forward_cache(spec, theta, X):
    layers = unpack(spec, theta)
    a = np.atleast_2d(np.asarray(X, dtype=float))
    if a.shape[1] != spec.n_inputs:
        raise ValueError(f"{spec.label}: expected {spec.n_inputs} features, got {a.shape[1]}")
    cache = []
    for i, (W, c) in enumerate(layers):
        z = a @ W + c
        out = _act(spec.activations[i], z) if i < len(layers) - 1 else z
        cache.append((a, z, out))
        a = out
    return a[:, 0], cache, layers


def mlp_predict(spec: MlpSpec, theta, X) -> np.ndarray:
    return _forward_cache(spec, theta, X)[0]


def mlp_forward(spec: MlpSpec, theta, x) -> float:
    return float(mlp_predict(spec, theta, np.atleast_2d(x))[0])


def mlp_jacobian(spec: MlpSpec, theta, X):
    """Per-sample predictions and gradients; ``(f (B,), jac (B, D))``."""
    f, cache, layers = _forward_cache(spec, theta, X)
    B = f.size
    parts = []
    delta = np.ones((B, 1))
    for i in range(len(layers) - 1, -1, -1):
        a_in, z, out = cache[i]
        if i < len(layers) - 1:
            delta = delta * _act_grad(spec.activations[i], z, out)
        parts.append((np.einsum("bi,bo->bio", a_in, delta).reshape(B, -1), delta))
        delta = delta @ layers[i][0].T
    return f, np.concatenate([p for pair in reversed(parts) for p in pair], axis=1)


def mlp_backward(spec: MlpSpec, theta, X, y):
    """Batch mean squared error and its exact gradient."""
    f, cache, layers = _forward_cache(spec, theta, X)
    y = np.asarray(y, dtype=float)
    res = f - y
    delta = (2.0 / y.size) * res[:, None]
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        a_in, z, out = cache[i]
        if i < len(layers) - 1:
            delta = delta * _act_grad(spec.activations[i], z, out)
        grads.append((a_in.T @ delta).ravel())
        grads.append(delta.sum(axis=0))
        delta = delta @ layers[i][0].T
    # collected output-first as (bias, weight) pairs after reversal
    grads = grads[::-1]
    flat = []
    for k in range(0, len(grads), 2):
        flat += [grads[k + 1], grads[k]]
    return float(np.mean(res**2)), np.concatenate(flat)


def mlp_to_json(spec: MlpSpec, theta) -> str:
    layers = unpack(spec, theta)
    return json.dumps({
        "layer_sizes": list(spec.layer_sizes),
        "activations": list(spec.activations),
        "layers": [{"weights": W.tolist(), "bias": c.tolist()} for W, c in layers],
    })


def mlp_from_json(text: str):
    doc = json.loads(text)
    spec = MlpSpec(tuple(doc["layer_sizes"]), tuple(doc["activations"]))
    theta = np.concatenate([np.concatenate([np.ravel(L["weights"]), L["bias"]]) for L in doc["layers"]])
    unpack(spec, theta)
    return spec, theta


# Reference layouts for eight and six input features.
T, L = "tanh", "leaky_relu"
LAYOUTS_8 = (
    MlpSpec((8, 10, 7, 4, 1)),
    MlpSpec((8, 9, 4, 9, 4, 1)),
    MlpSpec((8, 8, 8, 6, 1)),
    MlpSpec((8, 12, 6, 2, 1)),
    MlpSpec((8, 10, 10, 1)),
    MlpSpec((8, 8, 8, 4, 4, 1)),
)
LAYOUTS_6 = (
    MlpSpec((6, 8, 3, 7, 1)),
    MlpSpec((6, 6, 5, 5, 1)),
    MlpSpec((6, 7, 3, 7, 2, 1)),
    MlpSpec((6, 8, 3, 3, 2, 2, 2, 1), (T, L, T, T, L, T)),
    MlpSpec((6, 10, 4, 1)),
    MlpSpec((6, 5, 5, 4, 4, 1)),
)
del T, L
