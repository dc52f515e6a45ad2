"""From-scratch MLP: halving-width hidden layers, ReLU activations, a single
sigmoid output unit, trained with Adam under MAE or binary NLL.

All math is float64. Training is bit-reproducible given (config, data): weight
init, batch shuffling, and every update draw from one seeded generator.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DimMismatch, FormatError, NonFiniteLoss, RangeError
from .seeds import derive_seed

N_HIDDEN_RANGE = (0, 3)
FIRST_UNITS_RANGE = (64, 512)
LEARNING_RATE_RANGE = (1e-6, 10.0)
MIN_UNITS = 32

_PROB_EPS = 1e-7  # probability clamp applied before logarithms

_MLP1_MAGIC = b"MLP1"


class LossKind(str, Enum):
    MAE = "mae"
    BINARY_NLL = "binary_nll"


@dataclass(frozen=True)
class MLPConfig:
    n_hidden: int
    first_units: int
    learning_rate: float
    loss: LossKind
    seed: int
    max_epochs: int = 50
    batch_size: int = 32
    patience: int = 5

    def validate(self) -> None:
        if not N_HIDDEN_RANGE[0] <= self.n_hidden <= N_HIDDEN_RANGE[1]:
            raise RangeError(f"n_hidden {self.n_hidden} outside {N_HIDDEN_RANGE}")
        if not FIRST_UNITS_RANGE[0] <= self.first_units <= FIRST_UNITS_RANGE[1]:
            raise RangeError(f"first_units {self.first_units} outside {FIRST_UNITS_RANGE}")
        if not LEARNING_RATE_RANGE[0] <= self.learning_rate <= LEARNING_RATE_RANGE[1]:
            raise RangeError(
                f"learning_rate {self.learning_rate} outside {LEARNING_RATE_RANGE}"
            )
        if self.batch_size < 1:
            raise RangeError("batch_size must be >= 1")
        if self.patience < 1:
            raise RangeError("patience must be >= 1")
        if self.max_epochs < 1:
            raise RangeError("max_epochs must be >= 1")

    def to_json(self) -> dict:
        obj = {f.name: getattr(self, f.name) for f in fields(self)}
        obj["loss"] = self.loss.value
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "MLPConfig":
        obj = dict(obj)
        obj["loss"] = LossKind(obj["loss"])
        return cls(**obj)


def layer_sizes(n_hidden: int, first_units: int) -> list[int]:
    """Hidden widths: first_units, then repeated halving floored at 32 units."""
    if not N_HIDDEN_RANGE[0] <= n_hidden <= N_HIDDEN_RANGE[1]:
        raise RangeError(f"n_hidden {n_hidden} outside {N_HIDDEN_RANGE}")
    if not FIRST_UNITS_RANGE[0] <= first_units <= FIRST_UNITS_RANGE[1]:
        raise RangeError(f"first_units {first_units} outside {FIRST_UNITS_RANGE}")
    widths = []
    units = first_units
    for _ in range(n_hidden):
        widths.append(units)
        units = max(MIN_UNITS, units // 2)
    return widths


@dataclass
class MLPModel:
    weights: list[np.ndarray]  # layer i: (fan_in, fan_out)
    biases: list[np.ndarray]  # layer i: (fan_out,)
    config: MLPConfig
    input_dim: int
    train_history: list[dict] = field(default_factory=list)

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + layer_sizes(self.config.n_hidden, self.config.first_units) + [1]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        positive = z >= 0
        out = np.empty_like(z)
        out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
        ez = np.exp(z[~positive])
        out[~positive] = ez / (1.0 + ez)
    return out


def init_model(config: MLPConfig, input_dim: int) -> MLPModel:
    """Seeded uniform init scaled by fan-in + fan-out; zero biases."""
    config.validate()
    if input_dim < 1:
        raise DimMismatch("input_dim must be >= 1")
    dims = [input_dim] + layer_sizes(config.n_hidden, config.first_units) + [1]
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPModel(weights=weights, biases=biases, config=config, input_dim=input_dim)


def _forward_pass(weights, biases, X):
    """Returns (probabilities, pre-activations per layer, inputs per layer)."""
    zs, inputs = [], []
    a = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        inputs.append(a)
        z = a @ W + b
        zs.append(z)
        a = _sigmoid(z) if i == last else np.maximum(z, 0.0)
    return a[:, 0], zs, inputs


def forward(model: MLPModel, x) -> float | np.ndarray:
    """Probability in [0, 1] for one feature row, or a vector for a matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != model.input_dim:
        raise DimMismatch(f"expected {model.input_dim} features, got {X.shape[1]}")
    probs, _, _ = _forward_pass(model.weights, model.biases, X)
    return float(probs[0]) if single else probs


def predict_proba(model: MLPModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimMismatch(f"expected (n, {model.input_dim}) features, got {X.shape}")
    probs, _, _ = _forward_pass(model.weights, model.biases, X)
    return probs


def loss_value(kind: LossKind, predictions, targets) -> float:
    """Mean batch loss; probabilities are clamped before any logarithm."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if kind is LossKind.MAE:
        return float(np.mean(np.abs(p - y)))
    p = np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def backward(model: MLPModel, X, y, kind: LossKind):
    """Gradients of the mean batch loss for every weight and bias.

    Subgradient conventions: ReLU'(0) = 0 and, for MAE, d|p-y|/dp = 0 at p = y.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimMismatch(f"expected (n, {model.input_dim}) features, got {X.shape}")
    if y.shape != (X.shape[0],):
        raise DimMismatch(f"expected {X.shape[0]} targets, got shape {y.shape}")
    n = X.shape[0]
    probs, zs, inputs = _forward_pass(model.weights, model.biases, X)

    if kind is LossKind.BINARY_NLL:
        dz = (probs - y) / n
    else:
        dz = np.sign(probs - y) * probs * (1.0 - probs) / n
    dz = dz[:, None]

    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        grad_w[i] = inputs[i].T @ dz
        grad_b[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ model.weights[i].T
            dz = da * (zs[i - 1] > 0.0)
    return grad_w, grad_b


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place."""
    state.t += 1
    t = state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def train(config: MLPConfig, X_train, y_train, X_dev, y_dev) -> MLPModel:
    """Mini-batch Adam with dev-loss early stopping; returns the best-dev snapshot."""
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    X_dev = np.asarray(X_dev, dtype=np.float64)
    y_dev = np.asarray(y_dev, dtype=np.float64)
    if len(X_train) == 0 or len(X_dev) == 0:
        raise DimMismatch("train and dev sets must be non-empty")
    if X_train.shape[1] != X_dev.shape[1]:
        raise DimMismatch(
            f"train has {X_train.shape[1]} features but dev has {X_dev.shape[1]}"
        )

    model = init_model(config, X_train.shape[1])
    params = model.weights + model.biases
    state = AdamState.init_like(params)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))

    best_dev = np.inf
    best_weights = [w.copy() for w in model.weights]
    best_biases = [b.copy() for b in model.biases]
    epochs_since_best = 0

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(len(X_train))
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                grad_w, grad_b = backward(model, X_train[batch], y_train[batch], config.loss)
                adam_step(params, grad_w + grad_b, state, config.learning_rate)

            train_loss = loss_value(config.loss, predict_proba(model, X_train), y_train)
            dev_loss = loss_value(config.loss, predict_proba(model, X_dev), y_dev)
            if not (np.isfinite(train_loss) and np.isfinite(dev_loss)):
                raise NonFiniteLoss(epoch)
            model.train_history.append(
                {"epoch": epoch, "train_loss": train_loss, "dev_loss": dev_loss}
            )

            if dev_loss < best_dev:
                best_dev = dev_loss
                best_weights = [w.copy() for w in model.weights]
                best_biases = [b.copy() for b in model.biases]
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.patience:
                    break

    model.weights = best_weights
    model.biases = best_biases
    return model


# -- checkpoints -------------------------------------------------------------


def save_model(model: MLPModel, path: str | Path) -> None:
    """MLP1 checkpoint: magic, length-prefixed canonical JSON header, f64 layers."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(
        {"input_dim": model.input_dim, "config": model.config.to_json()},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MLP1_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for W, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path: str | Path) -> MLPModel:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != _MLP1_MAGIC:
        raise FormatError(f"{path}: bad magic, not an MLP1 checkpoint")
    (header_len,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8 : 8 + header_len])
        config = MLPConfig.from_json(header["config"])
        input_dim = int(header["input_dim"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid checkpoint header") from exc
    dims = [input_dim] + layer_sizes(config.n_hidden, config.first_units) + [1]
    pos = 8 + header_len
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        n_bytes = 8 * fan_in * fan_out
        if pos + n_bytes + 8 * fan_out > len(blob):
            raise FormatError(f"{path}: truncated checkpoint")
        weights.append(
            np.frombuffer(blob[pos : pos + n_bytes], dtype="<f8").reshape(fan_in, fan_out).copy()
        )
        pos += n_bytes
        biases.append(np.frombuffer(blob[pos : pos + 8 * fan_out], dtype="<f8").copy())
        pos += 8 * fan_out
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return MLPModel(weights=weights, biases=biases, config=config, input_dim=input_dim)
