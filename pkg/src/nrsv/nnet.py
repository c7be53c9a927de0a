"""Dense feedforward networks with exact backprop and SGD.

Float64 throughout. Forward passes cache pre-activations so gradients
are exact; layer freezing zeroes a layer's returned gradients while
still letting the error signal flow through it, which is what the
alternating adversarial updates need.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import containers
from .dsp import FeatureStats


class NnetError(Exception):
    pass


# ---------------------------------------------------------------------------
# activations


def _softplus(z):
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _apply(name: str, z: np.ndarray) -> np.ndarray:
    if name == "softplus":
        return _softplus(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softmax":
        return _softmax(z)
    if name == "linear":
        return z
    raise NnetError(f"unknown activation {name!r}")


def _backprop_activation(name: str, z: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    """dLoss/dz given dLoss/da."""
    if name == "softplus":
        return da * _sigmoid(z)
    if name == "tanh":
        return da * (1.0 - a * a)
    if name == "sigmoid":
        return da * a * (1.0 - a)
    if name == "relu":
        return da * (z > 0.0)
    if name == "softmax":
        return a * (da - np.sum(da * a, axis=1, keepdims=True))
    if name == "linear":
        return da
    raise NnetError(f"unknown activation {name!r}")


ACTIVATIONS = ("softplus", "tanh", "sigmoid", "relu", "softmax", "linear")


# ---------------------------------------------------------------------------
# model


@dataclass
class Layer:
    W: np.ndarray  # out x in
    b: np.ndarray  # out
    activation: str

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise NnetError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise NnetError(f"layer shape mismatch: W {self.W.shape}, b {self.b.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise NnetError("non-finite layer parameters")


@dataclass
class MlpModel:
    layers: list[Layer]
    input_dim: int
    rng_seed: int = 0
    input_stats: FeatureStats | None = None

    def __post_init__(self):
        dim = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.W.shape[1] != dim:
                raise NnetError(
                    f"layer {i} expects input dim {layer.W.shape[1]}, previous layer gives {dim}"
                )
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise NnetError("softmax is only allowed as the final activation")
            dim = layer.W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def n_params(self) -> int:
        return sum(l.W.size + l.b.size for l in self.layers)


def init_model(layer_sizes: list[int], activations: list[str], seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases; layer_sizes = [in, h1, ..., out]."""
    if len(activations) != len(layer_sizes) - 1:
        raise NnetError(
            f"{len(layer_sizes) - 1} layers need {len(layer_sizes) - 1} activations, "
            f"got {len(activations)}"
        )
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(layer_sizes[:-1], layer_sizes[1:], activations):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(W, np.zeros(fan_out), act))
    return MlpModel(layers, input_dim=layer_sizes[0], rng_seed=seed)


@dataclass
class ForwardCache:
    activations: list[np.ndarray]  # [X, a1, ..., a_out]
    zs: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


def forward(m: MlpModel, X: np.ndarray) -> ForwardCache:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.input_dim:
        raise NnetError(f"input shape {X.shape} does not match input_dim {m.input_dim}")
    if not np.all(np.isfinite(X)):
        raise NnetError("non-finite network input")
    activations = [X]
    zs = []
    a = X
    for layer in m.layers:
        z = a @ layer.W.T + layer.b
        a = _apply(layer.activation, z)
        zs.append(z)
        activations.append(a)
    return ForwardCache(activations, zs)


# ---------------------------------------------------------------------------
# losses


CE_LOG_FLOOR = 1e-12


def loss_ce(probs: np.ndarray, labels: np.ndarray) -> float:
    """Cross entropy, mean over batch rows, log floored."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise NnetError(f"probs {probs.shape} vs labels {labels.shape}")
    return float(-np.sum(labels * np.log(np.maximum(probs, CE_LOG_FLOOR))) / probs.shape[0])


def loss_mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise NnetError(f"pred {pred.shape} vs target {target.shape}")
    return float(np.mean((pred - target) ** 2))


# ---------------------------------------------------------------------------
# backprop


def backward(
    m: MlpModel,
    cache: ForwardCache,
    dA_out: np.ndarray | None = None,
    dZ_out: np.ndarray | None = None,
    frozen: frozenset | set = frozenset(),
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients (dW, db) per layer.

    Seed the recursion with dA_out (gradient wrt the final activation)
    or dZ_out (wrt the final pre-activation; used for softmax+CE).
    Frozen layers still propagate the error signal but their returned
    gradients are exact zeros.
    """
    if len(cache.zs) != len(m.layers):
        raise NnetError("forward cache does not match model")
    if (dA_out is None) == (dZ_out is None):
        raise NnetError("pass exactly one of dA_out, dZ_out")
    n_layers = len(m.layers)
    grads: list = [None] * n_layers
    if dZ_out is not None:
        dz = np.asarray(dZ_out, dtype=np.float64)
    else:
        dz = _backprop_activation(
            m.layers[-1].activation, cache.zs[-1], cache.activations[-1], np.asarray(dA_out)
        )
    for i in range(n_layers - 1, -1, -1):
        a_prev = cache.activations[i]
        if i in frozen:
            grads[i] = (np.zeros_like(m.layers[i].W), np.zeros_like(m.layers[i].b))
        else:
            grads[i] = (dz.T @ a_prev, dz.sum(axis=0))
        if i > 0:
            da = dz @ m.layers[i].W
            dz = _backprop_activation(
                m.layers[i - 1].activation, cache.zs[i - 1], cache.activations[i - 1], da
            )
    return grads


def ce_softmax_grads(m, cache, labels, frozen=frozenset()):
    """Gradients of loss_ce for a softmax-output model: dZ = (probs - labels)/m."""
    if m.layers[-1].activation != "softmax":
        raise NnetError("ce_softmax_grads requires a softmax output layer")
    probs = cache.output
    return backward(m, cache, dZ_out=(probs - labels) / probs.shape[0], frozen=frozen)


def mse_grads(m, cache, targets, frozen=frozenset()):
    pred = cache.output
    return backward(m, cache, dA_out=2.0 * (pred - targets) / pred.size, frozen=frozen)


def sgd_step(m: MlpModel, grads, lr: float, frozen=frozenset()) -> MlpModel:
    """In-place W <- W - lr*dW, b <- b - lr*db on non-frozen layers."""
    if lr < 0:
        raise NnetError(f"learning rate must be nonnegative, got {lr}")
    for i, (layer, (dW, db)) in enumerate(zip(m.layers, grads)):
        if i in frozen:
            continue
        layer.W -= lr * dW
        layer.b -= lr * db
    return m


def finite_difference_grads(m: MlpModel, loss_fn, h: float = 1e-5):
    """Central-difference gradients of loss_fn(model); the gradient oracle.

    loss_fn must evaluate the loss from the model alone (via forward),
    never via backward, so the two routes stay independent.
    """
    grads = []
    for layer in m.layers:
        dW = np.zeros_like(layer.W)
        for idx in np.ndindex(layer.W.shape):
            orig = layer.W[idx]
            layer.W[idx] = orig + h
            up = loss_fn(m)
            layer.W[idx] = orig - h
            down = loss_fn(m)
            layer.W[idx] = orig
            dW[idx] = (up - down) / (2.0 * h)
        db = np.zeros_like(layer.b)
        for j in range(layer.b.size):
            orig = layer.b[j]
            layer.b[j] = orig + h
            up = loss_fn(m)
            layer.b[j] = orig - h
            down = loss_fn(m)
            layer.b[j] = orig
            db[j] = (up - down) / (2.0 * h)
        grads.append((dW, db))
    return grads


def max_relative_grad_error(analytic, numeric) -> float:
    worst = 0.0
    for (aW, ab), (nW, nb) in zip(analytic, numeric):
        for a, n in ((aW, nW), (ab, nb)):
            denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 30
    batch_utterances: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise NnetError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_utterances < 1:
            raise NnetError("epochs and batch_utterances must be >= 1")


# ---------------------------------------------------------------------------
# serialization


def _model_payload(m: MlpModel):
    meta = {
        "input_dim": m.input_dim,
        "rng_seed": m.rng_seed,
        "activations": [l.activation for l in m.layers],
        "n_layers": len(m.layers),
        "has_stats": m.input_stats is not None,
    }
    arrays = {}
    for i, layer in enumerate(m.layers):
        arrays[f"W{i}"] = layer.W
        arrays[f"b{i}"] = layer.b
    if m.input_stats is not None:
        arrays["stats_mean"] = m.input_stats.mean
        arrays["stats_var"] = m.input_stats.var
    return meta, arrays


def _model_from_payload(meta, arrays) -> MlpModel:
    layers = [
        Layer(arrays[f"W{i}"], arrays[f"b{i}"], act) for i, act in enumerate(meta["activations"])
    ]
    stats = None
    if meta.get("has_stats"):
        stats = FeatureStats(arrays["stats_mean"], arrays["stats_var"])
    return MlpModel(layers, meta["input_dim"], meta["rng_seed"], stats)


def save_model(path, m: MlpModel) -> None:
    meta, arrays = _model_payload(m)
    meta["model_kind"] = "mlp"
    containers.write_container(path, containers.MLP_MAGIC, containers.MLP_VERSION, meta, arrays)


def load_model(path) -> MlpModel:
    meta, arrays = containers.read_container(path, containers.MLP_MAGIC, containers.MLP_VERSION)
    if meta.get("model_kind") != "mlp":
        raise NnetError(f"{path}: expected a plain MLP container, got {meta.get('model_kind')!r}")
    return _model_from_payload(meta, arrays)
