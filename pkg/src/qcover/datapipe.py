"""Feature and target transforms, the Xu-Randall cloud-cover scheme, and synthetic data.

Raw data are held column-wise in a :class:`RawDataset`.  Features are mapped to
rotation angles in ``[0, pi]``: the sharply peaked contents (``q_v``, ``q_c``,
``q_i``) and the wind speed go through the log-power transform
:func:`loglinear`, the rest through min-max scaling.  The cloud-cover target is
mapped to ``y = g(clc)`` by :func:`g`, which spreads out values near 0 and 1.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

COLUMNS = ("q_v", "q_c", "q_i", "T", "p", "h_w", "z_g", "phi", "clc")
FEATURES_8 = ("q_v", "q_c", "q_i", "T", "p", "h_w", "z_g", "phi")
FEATURES_6 = ("q_v", "q_c", "q_i", "T", "p", "h_w")

XU_RANDALL_ALPHA = 4.034e4
XU_RANDALL_BETA = 0.9942
CONDENSATE_THRESHOLD = 1e-6     # kg/kg, cloudy-cell flag

G_A = 1.29407913
G_B = -3.20011015
G_C = 0.70308237


class DataError(ValueError):
    """Malformed or unusable input data."""


# --- feature transforms ----------------------------------------------------------


@dataclass(frozen=True)
class FeatureTransform:
    kind: str           # 'loglinear' or 'minmax'
    x_low: float
    x_high: float
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("loglinear", "minmax"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not self.x_high > self.x_low:
            raise ValueError(f"need x_high > x_low, got [{self.x_low}, {self.x_high}]")
        if self.kind == "loglinear" and (self.b <= 0 or self.x_low < 0):
            raise ValueError("loglinear transform needs b > 0 and x_low >= 0")


def _log_power(x, t: FeatureTransform):
    return np.log1p((math.e - 1.0) * (x / t.x_high) ** t.b)


def loglinear(value, t: FeatureTransform):
    """``(log(1 + (e-1)(x/x_high)^b) - h0) / (1 - h0)`` with ``h0`` its value at ``x_low``."""
    x = np.clip(np.asarray(value, dtype=float), t.x_low, t.x_high)
    h0 = _log_power(t.x_low, t)
    out = (_log_power(x, t) - h0) / (1.0 - h0)
    # exact endpoints despite rounding in log1p
    return np.where(x <= t.x_low, 0.0, np.where(x >= t.x_high, 1.0, out))


def minmax(value, t: FeatureTransform):
    x = np.clip(np.asarray(value, dtype=float), t.x_low, t.x_high)
    return (x - t.x_low) / (t.x_high - t.x_low)


def transform_feature(t: FeatureTransform, value):
    """Map raw values to ``[0, 1]``, clamping outside ``[x_low, x_high]``."""
    if not np.all(np.isfinite(value)):
        raise ValueError("feature values must be finite")
    out = loglinear(value, t) if t.kind == "loglinear" else minmax(value, t)
    return float(out) if np.ndim(out) == 0 else out


DEFAULT_TRANSFORMS = {
    "q_v": FeatureTransform("loglinear", 1e-7, 0.025, 0.25),
    "q_c": FeatureTransform("loglinear", 0.0, 0.00145, 0.25),
    "q_i": FeatureTransform("loglinear", 0.0, 0.00055, 0.25),
    "h_w": FeatureTransform("loglinear", 0.0015, 115.0, 0.5),
    "T": FeatureTransform("minmax", 200.0, 310.0),
    "p": FeatureTransform("minmax", 5e3, 1.05e5),
    "z_g": FeatureTransform("minmax", 0.0, 21000.0),
    "phi": FeatureTransform("minmax", -math.pi / 2, math.pi / 2),
}


@dataclass(frozen=True)
class TransformSpec:
    transforms: dict = field(default_factory=lambda: dict(DEFAULT_TRANSFORMS))
    scale: float = math.pi

    def with_minmax_fit(self, raw: "RawDataset") -> "TransformSpec":
        """Copy with min-max bounds re-estimated from ``raw``."""
        out = dict(self.transforms)
        for name, t in self.transforms.items():
            if t.kind == "minmax":
                col = raw.column(name)
                if col.size and col.max() > col.min():
                    out[name] = FeatureTransform("minmax", float(col.min()), float(col.max()))
        return TransformSpec(out, self.scale)

    def to_json(self) -> str:
        return json.dumps({"scale": self.scale,
                           "transforms": {k: asdict(v) for k, v in self.transforms.items()}})

    @classmethod
    def from_json(cls, text: str) -> "TransformSpec":
        doc = json.loads(text)
        return cls({k: FeatureTransform(**v) for k, v in doc["transforms"].items()}, doc["scale"])


# --- target transform --------------------------------------------------------------


def g(clc):
    """Target transform; monotone map of ``[0, 1]`` onto itself with ``g(0)=0``, ``g(1)=1``.

    Written as ``(2/pi) arcsin(sqrt(r))``, equal to ``1/2 + arcsin(2r - 1)/pi``
    but without the cancellation near the endpoints.
    """
    x = np.clip(np.asarray(clc, dtype=float), 0.0, 1.0)
    r = (np.expm1(G_B * x**G_A) / math.expm1(G_B)) ** G_C
    out = (2.0 / math.pi) * np.arcsin(np.sqrt(np.clip(r, 0.0, 1.0)))
    return float(out) if np.ndim(out) == 0 else out


def g_inv(y):
    """Inverse of :func:`g`; inputs are clamped to ``[0, 1]``."""
    y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
    u = np.sin(0.5 * math.pi * y) ** 2
    u = u ** (1.0 / G_C)
    out = (np.log1p(u * math.expm1(G_B)) / G_B) ** (1.0 / G_A)
    out = np.where(y >= 1.0, 1.0, np.clip(out, 0.0, 1.0))
    return float(out) if np.ndim(out) == 0 else out


# --- Xu-Randall ----------------------------------------------------------------------


def saturation_pressure(T):
    """Saturation vapour pressure over water in Pa (Murray-type exponential fit)."""
    T = np.asarray(T, dtype=float)
    return 610.78 * np.exp(17.2693882 * (T - 273.16) / (T - 35.86))


def relative_humidity(q_v, p, T):
    q_v = np.asarray(q_v, dtype=float)
    rh = np.asarray(p, dtype=float) / saturation_pressure(T) * q_v / (0.622 + 0.378 * q_v)
    return np.maximum(rh, 0.0)


def xu_randall(q_v, q_c, q_i, p, T, alpha=XU_RANDALL_ALPHA, beta=XU_RANDALL_BETA):
    """``min(1, RH^beta (1 - exp(-alpha (q_c + q_i))))``; supersaturation is capped afterwards."""
    if np.any(np.asarray(T) <= 0) or np.any(np.asarray(p) <= 0):
        raise ValueError("temperature and pressure must be positive")
    rh = relative_humidity(q_v, p, T)
    cond = np.asarray(q_c, dtype=float) + np.asarray(q_i, dtype=float)
    out = np.minimum(1.0, rh**beta * -np.expm1(-alpha * cond))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class XuRandallFit:
    alpha: float
    beta: float
    mse: float
    degenerate: bool      # alpha pushed to the lower grid edge (no cloud signal)


def _xr_loss_grad(log_alpha, beta, rh, cond, clc):
    alpha = math.exp(log_alpha)
    e = -np.expm1(-alpha * cond)
    with np.errstate(divide="ignore"):
        log_rh = np.where(rh > 0, np.log(np.where(rh > 0, rh, 1.0)), -np.inf)
    rb = np.where(rh > 0, np.exp(beta * np.where(np.isfinite(log_rh), log_rh, 0.0)), 0.0)
    raw = rb * e
    pred = np.minimum(1.0, raw)
    live = raw < 1.0
    res = pred - clc
    d_beta = np.where(live & (rh > 0), raw * np.where(np.isfinite(log_rh), log_rh, 0.0), 0.0)
    d_la = np.where(live, rb * alpha * cond * np.exp(-alpha * cond), 0.0)
    n = clc.size
    return float(np.mean(res**2)), 2.0 * np.array([res @ d_la, res @ d_beta]) / n


def fit_xu_randall(raw: "RawDataset", grid_alpha=None, grid_beta=None,
                   steps: int = 3000, lr: float = 0.02) -> XuRandallFit:
    """Least-squares fit of ``(alpha, beta)``: coarse log-grid, then Adam on ``(log alpha, beta)``."""
    if "clc" not in raw.columns or len(raw) == 0:
        raise DataError("fitting needs a non-empty dataset with a clc column")
    rh = relative_humidity(raw.q_v, raw.p, raw.T)
    cond = raw.q_c + raw.q_i
    clc = raw.clc
    grid_alpha = np.logspace(0, 7, 29) if grid_alpha is None else np.asarray(grid_alpha)
    grid_beta = np.linspace(0.1, 3.0, 30) if grid_beta is None else np.asarray(grid_beta)
    best = (math.inf, 0.0, 1.0)
    for a in grid_alpha:
        for bt in grid_beta:
            loss, _ = _xr_loss_grad(math.log(a), bt, rh, cond, clc)
            if loss < best[0]:
                best = (loss, math.log(a), bt)
    from .training import AdamState, adam_step

    state = AdamState.fresh(best[1:])
    for t in range(steps):
        _, grad = _xr_loss_grad(state.params[0], state.params[1], rh, cond, clc)
        # step size decays so the iterate settles instead of jittering at scale lr
        state = adam_step(state, grad, lr / (1.0 + t / 300.0))
    x = state.params
    loss, _ = _xr_loss_grad(x[0], x[1], rh, cond, clc)
    degenerate = bool(x[0] <= math.log(grid_alpha[0]) + 1e-9 or not np.any(clc > 0))
    return XuRandallFit(math.exp(x[0]), float(x[1]), loss, degenerate)


# --- datasets ------------------------------------------------------------------------


@dataclass
class RawDataset:
    """Column-wise raw samples; every column is a float array of the same length."""

    columns: dict

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise DataError(f"columns have different lengths: {sorted(lengths)}")
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getattr__(self, name):
        cols = self.__dict__.get("columns", {})
        if name in cols:
            return cols[name]
        raise AttributeError(name)

    def column(self, name):
        return self.columns[name]

    def subset(self, index) -> "RawDataset":
        return RawDataset({k: v[index] for k, v in self.columns.items()})

    def validate(self):
        c = self.columns
        if any(np.any(c[k] < 0) for k in ("q_v", "q_c", "q_i") if k in c):
            raise DataError("specific contents must be non-negative")
        if any(np.any(c[k] <= 0) for k in ("T", "p") if k in c):
            raise DataError("temperature and pressure must be positive")
        if "clc" in c and (np.any(c["clc"] < 0) or np.any(c["clc"] > 1)):
            raise DataError("clc must lie in [0, 1]")
        return self


@dataclass
class Dataset:
    """Model-ready samples: angles ``X`` in ``[0, pi]`` and targets ``y = g(clc)``."""

    X: np.ndarray
    y: np.ndarray
    features: tuple
    raw: RawDataset | None = None

    def __len__(self):
        return len(self.y)

    def subset(self, index) -> "Dataset":
        raw = self.raw.subset(index) if self.raw is not None else None
        return Dataset(self.X[index], self.y[index], self.features, raw)


def assemble(raw: RawDataset, features=FEATURES_8, spec: TransformSpec | None = None) -> Dataset:
    spec = TransformSpec() if spec is None else spec
    X = np.column_stack([transform_feature(spec.transforms[f], raw.column(f)) for f in features])
    X = spec.scale * X.reshape(len(raw), len(features))
    y = g(raw.clc) if "clc" in raw.columns else np.full(len(raw), np.nan)
    return Dataset(X, np.atleast_1d(y), tuple(features), raw)


def train_test_split(ds: Dataset, test_fraction: float, rng_seed) -> tuple[Dataset, Dataset]:
    perm = np.random.default_rng(rng_seed).permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def coarse_grain_toy(highres_cells) -> float:
    """Cloud-cover fraction of one coarse cell from its high-resolution ``(q_c, q_i)`` cells."""
    cells = np.asarray(highres_cells, dtype=float).reshape(-1, 2)
    if cells.shape[0] == 0:
        raise ValueError("no high-resolution cells")
    return float(np.mean(cells.sum(axis=1) > CONDENSATE_THRESHOLD))


def filter_condensate(raw: RawDataset) -> RawDataset:
    """Drop samples with no cloud condensate at all."""
    return raw.subset((raw.q_c + raw.q_i) > 0)


def _log_uniform(rng, lo, hi, n):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), n))


# lower edge for log-uniform draws of contents whose transform starts at 0
CONTENT_FLOOR = 1e-9


def generate_synthetic(n_samples: int, rng_seed, noise_sigma: float = 0.0,
                       alpha=XU_RANDALL_ALPHA, beta=XU_RANDALL_BETA) -> RawDataset:
    """Physically-ranged random samples labelled by the Xu-Randall scheme.

    Draws: ``q_v`` log-uniform on [1e-7, 0.025]; ``q_c``, ``q_i`` log-uniform from
    ``CONTENT_FLOOR`` to their transform upper bounds; ``T`` ~ U[200, 310] K;
    ``p`` ~ U[5e3, 1.05e5] Pa; ``h_w`` half-normal (scale 10 m/s) capped at 115;
    ``z_g`` ~ U[0, 21000] m; ``phi`` ~ U[-pi/2, pi/2].  Targets are
    ``clip(xu_randall + N(0, noise_sigma), 0, 1)``.
    """
    if n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    rng = np.random.default_rng(rng_seed)
    n = n_samples
    cols = {
        "q_v": _log_uniform(rng, 1e-7, 0.025, n),
        "q_c": _log_uniform(rng, CONTENT_FLOOR, 0.00145, n),
        "q_i": _log_uniform(rng, CONTENT_FLOOR, 0.00055, n),
        "T": rng.uniform(200.0, 310.0, n),
        "p": rng.uniform(5e3, 1.05e5, n),
        "h_w": np.minimum(np.abs(rng.normal(0.0, 10.0, n)), 115.0),
        "z_g": rng.uniform(0.0, 21000.0, n),
        "phi": rng.uniform(-math.pi / 2, math.pi / 2, n),
    }
    clc = np.atleast_1d(xu_randall(cols["q_v"], cols["q_c"], cols["q_i"], cols["p"], cols["T"], alpha, beta))
    if noise_sigma > 0:
        clc = clc + rng.normal(0.0, noise_sigma, n)
    cols["clc"] = np.clip(clc, 0.0, 1.0)
    return filter_condensate(RawDataset(cols))


# --- CSV -------------------------------------------------------------------------------


def save_csv(path, raw: RawDataset) -> None:
    missing = [c for c in COLUMNS if c not in raw.columns]
    if missing:
        raise DataError(f"dataset lacks columns {missing}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for i in range(len(raw)):
            w.writerow([repr(float(raw.columns[c][i])) for c in COLUMNS])


def load_csv(path, required=COLUMNS) -> RawDataset:
    """Read a dataset written by :func:`save_csv` (header checked, rows validated)."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        warnings.warn(f"{path} is empty", RuntimeWarning, stacklevel=2)
        return RawDataset({c: np.empty(0) for c in COLUMNS})
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    data = {h: [] for h in header}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        for h, v in zip(header, row):
            try:
                data[h].append(float(v))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad value {v!r} in column {h}") from None
    if len(rows) == 1:
        warnings.warn(f"{path} has no data rows", RuntimeWarning, stacklevel=2)
    return RawDataset({h: np.array(v, dtype=float) for h, v in data.items()}).validate()
