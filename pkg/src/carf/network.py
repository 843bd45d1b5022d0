"""Shallow regression network mapping scaled GOP features to the three
CRF-bitrate curve coefficients.

Two softplus hidden layers feed three output heads with sign transforms
(a = softplus, b = -softplus, c = identity), so any forward pass yields a
valid curve. The training loss is the mean absolute CRF gap between the
predicted and label curves, evaluated over a log-spaced bitrate grid; the
raw (unclamped, unquantized) curve is used so gradients never plateau.
Training is plain mini-batch descent with per-parameter first/second
moment step sizes and is bit-deterministic under a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CarfError
from .features import (
    FEATURE_NAMES,
    FEATURE_VERSION,
    FeatureScaler,
    GopFeatures,
    apply_scaler,
    fit_scaler,
)
from .rate_model import RateModelParams, eval_crf_curve

__all__ = [
    "BITRATE_GRID_MIN",
    "BITRATE_GRID_MAX",
    "MODEL_FORMAT",
    "MODEL_VERSION",
    "ModelFormatError",
    "TrainingDivergedError",
    "TrainingSample",
    "TrainConfig",
    "MlpModel",
    "forward",
    "crf_set_loss",
    "batch_loss",
    "gradients",
    "TrainResult",
    "train",
    "save_model",
    "load_model",
    "model_fingerprint",
]

BITRATE_GRID_MIN = 200.0
BITRATE_GRID_MAX = 12000.0
MODEL_FORMAT = "carf-mlp"
MODEL_VERSION = 1
_DEFAULT_GRID = tuple(
    float(r) for r in np.geomspace(BITRATE_GRID_MIN, BITRATE_GRID_MAX, 24)
)


class ModelFormatError(CarfError):
    """Model file is corrupt or from an unknown format version."""


class TrainingDivergedError(CarfError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class TrainingSample:
    features: GopFeatures
    label: RateModelParams
    clip_id: str = ""


@dataclass(frozen=True)
class TrainConfig:
    bitrate_grid: tuple[float, ...] = _DEFAULT_GRID
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    hidden1: int = 64
    hidden2: int = 32

    def __post_init__(self):
        if not self.bitrate_grid:
            raise ValueError("empty bitrate grid")
        for r in self.bitrate_grid:
            if not BITRATE_GRID_MIN - 1e-6 <= r <= BITRATE_GRID_MAX + 1e-6:
                raise ValueError(f"grid point {r} outside "
                                 f"[{BITRATE_GRID_MIN}, {BITRATE_GRID_MAX}] kbps")
        for name in ("epochs", "batch_size", "learning_rate", "hidden1", "hidden2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    scaler: FeatureScaler
    seed: int
    activation: str = "softplus"
    version: int = MODEL_VERSION

    def __post_init__(self):
        if len(self.layer_sizes) != 4:
            raise ValueError("expected 4 layer sizes (in, h1, h2, out)")
        if self.layer_sizes[0] != len(FEATURE_NAMES) or self.layer_sizes[-1] != 3:
            raise ValueError(f"layer sizes must start at {len(FEATURE_NAMES)} "
                             "and end at 3")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ValueError(f"layer {i} shapes {w.shape}/{b.shape} "
                                 f"inconsistent with sizes {self.layer_sizes}")


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward_batch(model: MlpModel, x: np.ndarray) -> dict:
    z1 = x @ model.weights[0] + model.biases[0]
    h1 = _softplus(z1)
    z2 = h1 @ model.weights[1] + model.biases[1]
    h2 = _softplus(z2)
    z3 = h2 @ model.weights[2] + model.biases[2]
    return {
        "x": x, "z1": z1, "h1": h1, "z2": z2, "h2": h2, "z3": z3,
        "a": _softplus(z3[:, 0]),
        "b": -_softplus(z3[:, 1]),
        "c": z3[:, 2],
    }


def forward(model: MlpModel, features: GopFeatures) -> RateModelParams:
    """Predict curve coefficients for one GOP; the heads guarantee the
    a >= 0, b <= 0 sign invariants."""
    x = apply_scaler(model.scaler, features)[None, :]
    out = _forward_batch(model, x)
    a, b, c = float(out["a"][0]), float(out["b"][0]), float(out["c"][0])
    if not all(math.isfinite(v) for v in (a, b, c)):
        raise ValueError(f"non-finite network output (a={a}, b={b}, c={c})")
    return RateModelParams(a=a, b=b, c=c)


def crf_set_loss(pred: RateModelParams, label: RateModelParams,
                 grid: Sequence[float]) -> float:
    """Mean absolute CRF gap between two curves over a bitrate grid.

    Both curves are evaluated raw so the value is differentiable in the
    prediction coefficients.
    """
    if not len(grid):
        raise ValueError("empty bitrate grid")
    total = 0.0
    for r in grid:
        total += abs(eval_crf_curve(label, r) - eval_crf_curve(pred, r))
    return total / len(grid)


def _label_arrays(batch: Sequence[TrainingSample]) -> tuple[np.ndarray, ...]:
    la = np.array([s.label.a for s in batch])
    lb = np.array([s.label.b for s in batch])
    lc = np.array([s.label.c for s in batch])
    return la, lb, lc


def _curves(a, b, c, x1, x2) -> np.ndarray:
    return a[:, None] * x2[None, :] + b[:, None] * x1[None, :] + c[:, None]


def _scaled_inputs(model: MlpModel, batch: Sequence[TrainingSample]) -> np.ndarray:
    return np.stack([apply_scaler(model.scaler, s.features) for s in batch])


def batch_loss(model: MlpModel, batch: Sequence[TrainingSample],
               grid: Sequence[float]) -> float:
    """Mean crf_set_loss over a batch (vectorized)."""
    if not batch:
        raise ValueError("empty batch")
    x1 = np.log(np.asarray(grid, dtype=np.float64))
    x2 = x1 * x1
    out = _forward_batch(model, _scaled_inputs(model, batch))
    la, lb, lc = _label_arrays(batch)
    gap = _curves(la, lb, lc, x1, x2) - _curves(out["a"], out["b"], out["c"], x1, x2)
    return float(np.abs(gap).mean())


def gradients(model: MlpModel, batch: Sequence[TrainingSample],
              grid: Sequence[float]) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """Exact reverse-mode derivatives of the mean batch loss.

    Returns (weight grads, bias grads, loss). The |.| subgradient at zero
    is taken as 0.
    """
    if not batch:
        raise ValueError("empty batch")
    x1 = np.log(np.asarray(grid, dtype=np.float64))
    x2 = x1 * x1
    n_b, n_g = len(batch), len(x1)

    xin = _scaled_inputs(model, batch)
    out = _forward_batch(model, xin)
    la, lb, lc = _label_arrays(batch)
    pred = _curves(out["a"], out["b"], out["c"], x1, x2)
    gap = pred - _curves(la, lb, lc, x1, x2)
    loss = float(np.abs(gap).mean())

    dpred = np.sign(gap) / (n_b * n_g)
    da = dpred @ x2
    db = dpred @ x1
    dc = dpred.sum(axis=1)
    dz3 = np.column_stack([
        da * _sigmoid(out["z3"][:, 0]),
        -db * _sigmoid(out["z3"][:, 1]),
        dc,
    ])

    dw3 = out["h2"].T @ dz3
    db3 = dz3.sum(axis=0)
    dh2 = dz3 @ model.weights[2].T
    dz2 = dh2 * _sigmoid(out["z2"])
    dw2 = out["h1"].T @ dz2
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ model.weights[1].T
    dz1 = dh1 * _sigmoid(out["z1"])
    dw1 = xin.T @ dz1
    db1 = dz1.sum(axis=0)

    grads_w = [dw1, dw2, dw3]
    grads_b = [db1, db2, db3]
    for i, g in enumerate(grads_w + grads_b):
        if not np.all(np.isfinite(g)):
            kind = "W" if i < 3 else "b"
            raise ValueError(f"non-finite gradient in {kind}{i % 3 + 1}")
    return grads_w, grads_b, loss


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    model: MlpModel
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0


def _softplus_inverse(y: float) -> float:
    y = max(y, 1e-9)
    return math.log(math.expm1(y)) if y < 30 else y


def _init_model(train_samples: Sequence[TrainingSample],
                config: TrainConfig) -> MlpModel:
    rng = np.random.default_rng(config.seed)
    sizes = (len(FEATURE_NAMES), config.hidden1, config.hidden2, 3)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    # Seed the output heads at the label means so descent starts near the
    # right curve family instead of at softplus(0).
    la, lb, lc = _label_arrays(train_samples)
    biases[2] = np.array([
        max(_softplus_inverse(float(la.mean())), -20.0),
        max(_softplus_inverse(float(-lb.mean())), -20.0),
        float(lc.mean()),
    ])
    scaler = fit_scaler([s.features for s in train_samples])
    return MlpModel(layer_sizes=sizes, weights=weights, biases=biases,
                    scaler=scaler, seed=config.seed)


def train(train_samples: Sequence[TrainingSample],
          val_samples: Sequence[TrainingSample],
          config: TrainConfig | None = None) -> TrainResult:
    """Fit the network; returns the weights with the best validation loss.

    The caller owns the train/validation split. With an empty validation
    set the training loss drives model selection instead.
    """
    config = config or TrainConfig()
    if len(train_samples) < 10:
        raise ValueError(f"need >= 10 training samples, got {len(train_samples)}")
    model = _init_model(train_samples, config)
    grid = config.bitrate_grid
    rng = np.random.default_rng(config.seed + 1)

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    step = 0

    best_val = math.inf
    best_epoch = 0
    best_weights = [w.copy() for w in model.weights]
    best_biases = [b.copy() for b in model.biases]
    history: list[tuple[int, float, float]] = []

    n = len(train_samples)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = [train_samples[i] for i in idx]
            gw, gb, loss = gradients(model, batch, grid)
            loss_sum += loss * len(batch)
            step += 1
            scale = config.learning_rate * math.sqrt(1 - beta2**step) / (1 - beta1**step)
            for i in range(3):
                m_w[i] = beta1 * m_w[i] + (1 - beta1) * gw[i]
                v_w[i] = beta2 * v_w[i] + (1 - beta2) * gw[i] ** 2
                model.weights[i] -= scale * m_w[i] / (np.sqrt(v_w[i]) + eps)
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * gb[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * gb[i] ** 2
                model.biases[i] -= scale * m_b[i] / (np.sqrt(v_b[i]) + eps)
        train_loss = loss_sum / n
        val_loss = (
            batch_loss(model, val_samples, grid) if val_samples else train_loss
        )
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDivergedError(f"loss diverged at epoch {epoch}")
        history.append((epoch, train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_weights = [w.copy() for w in model.weights]
            best_biases = [b.copy() for b in model.biases]

    model.weights = best_weights
    model.biases = best_biases
    return TrainResult(model=model, history=history, best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# Serialization


def _model_doc(model: MlpModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": model.version,
        "activation": model.activation,
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "scaler": {
            "mean": model.scaler.mean.tolist(),
            "std": model.scaler.std.tolist(),
            "version": model.scaler.version,
        },
        "seed": model.seed,
    }


def _model_bytes(model: MlpModel) -> bytes:
    return json.dumps(_model_doc(model), sort_keys=True).encode("ascii")


def model_fingerprint(model: MlpModel) -> str:
    return hashlib.sha256(_model_bytes(model)).hexdigest()[:16]


def save_model(model: MlpModel, path: str | Path) -> None:
    Path(path).write_bytes(_model_bytes(model))


def load_model(path: str | Path) -> MlpModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path} is not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {doc.get('version')!r} "
            f"(expected {MODEL_VERSION})"
        )
    try:
        scaler = FeatureScaler(
            mean=np.asarray(doc["scaler"]["mean"], dtype=np.float64),
            std=np.asarray(doc["scaler"]["std"], dtype=np.float64),
            version=doc["scaler"]["version"],
        )
        model = MlpModel(
            layer_sizes=tuple(doc["layer_sizes"]),
            weights=[np.asarray(w, dtype=np.float64) for w in doc["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in doc["biases"]],
            scaler=scaler,
            seed=int(doc["seed"]),
            activation=str(doc["activation"]),
            version=int(doc["version"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from exc
    if scaler.version != FEATURE_VERSION:
        raise ModelFormatError(
            f"model expects feature version {scaler.version!r}, "
            f"this build provides {FEATURE_VERSION!r}"
        )
    return model
