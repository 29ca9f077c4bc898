"""Dense numerical core: small MLPs with analytic gradients, losses, SGD and
a Laplace sampler.

Everything here is a pure function of its arguments (plus an explicit
``numpy.random.Generator`` where randomness is needed). Matrices are plain
row-major ``float64`` ndarrays; a layer computes ``x @ weight + bias``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple, Union

import numpy as np

from .exceptions import DimensionError, DomainError, TrainingError

ACTIVATIONS = ("identity", "relu", "sigmoid")

GradientBundle = Dict[str, np.ndarray]


def check_matrix(x, name="input", cols=None) -> np.ndarray:
    """Coerce ``x`` to a finite 2-D float64 array, optionally checking width."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionError(
            f"{name} has shape {arr.shape}, expected {cols} columns"
        )
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise DimensionError(f"layer weight must be 2-D, got {w.shape}")
        if b.shape != (w.shape[1],):
            raise DimensionError(
                f"bias shape {b.shape} does not match weight shape {w.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class MlpParams:
    layers: Tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("an MLP needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i - 1].out_dim != layers[i].in_dim:
                raise DimensionError(
                    f"layer {i - 1} outputs {layers[i - 1].out_dim} but "
                    f"layer {i} expects {layers[i].in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> Dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layers.{i}.weight"] = layer.weight
            out[f"layers.{i}.bias"] = layer.bias
        return out

    def with_parameters(self, values: Mapping[str, np.ndarray]) -> "MlpParams":
        layers = []
        for i, layer in enumerate(self.layers):
            w = values.get(f"layers.{i}.weight", layer.weight)
            b = values.get(f"layers.{i}.bias", layer.bias)
            if np.shape(w) != layer.weight.shape or np.shape(b) != layer.bias.shape:
                raise DimensionError(f"replacement shapes differ at layer {i}")
            layers.append(Layer(w, b, layer.activation))
        return MlpParams(tuple(layers))

    def copy(self) -> "MlpParams":
        return MlpParams(
            tuple(Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers)
        )


def init_mlp(sizes: Sequence[int], rng: np.random.Generator,
             hidden_activation="relu", output_activation="identity") -> MlpParams:
    """Weights uniform in +-1/sqrt(fan_in), zero biases."""
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        act = output_activation if i == len(sizes) - 2 else hidden_activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpParams(tuple(layers))


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return sigmoid(z)
    return z


def _forward_trace(params: MlpParams, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise DimensionError(
            f"input shape {x.shape} incompatible with first layer "
            f"weight shape {params.layers[0].weight.shape}"
        )
    inputs, pre = [], []
    h = x
    for layer in params.layers:
        inputs.append(h)
        z = h @ layer.weight + layer.bias
        pre.append(z)
        h = _activate(z, layer.activation)
    return inputs, pre, h


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return _forward_trace(params, x)[2]


def mlp_logits(params: MlpParams, x) -> np.ndarray:
    """Forward pass that stops before the output activation."""
    x = np.asarray(x, dtype=np.float64)
    return _forward_trace(params, x)[1][-1]


def mlp_backward(params: MlpParams, x, upstream_grad, wrt_logits=False
                 ) -> Tuple[GradientBundle, np.ndarray]:
    """Backpropagate ``upstream_grad`` through the network.

    ``upstream_grad`` is the loss gradient w.r.t. the network output, or
    w.r.t. the output pre-activation when ``wrt_logits`` is set (the form
    BCE-with-sigmoid produces). Returns the parameter gradients keyed like
    :meth:`MlpParams.parameters` and the gradient w.r.t. ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    inputs, pre, out = _forward_trace(params, x)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != out.shape:
        raise DimensionError(
            f"upstream gradient shape {g.shape} does not match output shape {out.shape}"
        )
    grads: GradientBundle = {}
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        if i == len(params.layers) - 1 and wrt_logits:
            pass
        elif layer.activation == "relu":
            g = g * (pre[i] > 0)
        elif layer.activation == "sigmoid":
            s = sigmoid(pre[i])
            g = g * s * (1.0 - s)
        grads[f"layers.{i}.weight"] = inputs[i].T @ g
        grads[f"layers.{i}.bias"] = g.sum(axis=0)
        g = g @ layer.weight.T
    return grads, g


def bce_loss_and_grad(predictions, labels) -> Tuple[float, np.ndarray]:
    """Summed binary cross-entropy; gradient is w.r.t. the pre-sigmoid logits."""
    y_hat = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y_hat.shape != y.shape:
        raise DimensionError(f"predictions {y_hat.shape} vs labels {y.shape}")
    if np.any(~((y_hat > 0.0) & (y_hat < 1.0))):
        raise DomainError("predictions must lie strictly inside (0, 1)")
    loss = -np.sum(y * np.log(y_hat) + (1.0 - y) * np.log1p(-y_hat))
    return float(loss), y_hat - y


def bce_with_logits(logits, labels) -> Tuple[float, np.ndarray]:
    """Same loss as :func:`bce_loss_and_grad`, evaluated stably from logits."""
    z = np.asarray(logits, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if z.shape != y.shape:
        raise DimensionError(f"logits {z.shape} vs labels {y.shape}")
    # -log sigmoid(z) = log(1 + e^-z); -log(1 - sigmoid(z)) = log(1 + e^z)
    loss = np.sum(y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z))
    return float(loss), sigmoid(z) - y


def mse_loss_and_grad(predicted, target) -> Tuple[float, np.ndarray]:
    """Squared error summed over columns, averaged over rows."""
    a = np.asarray(predicted, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"predicted shape {a.shape} vs target shape {b.shape}")
    m = a.shape[0]
    if m == 0:
        return 0.0, np.zeros_like(a)
    diff = a - b
    return float(np.sum(diff * diff) / m), (2.0 / m) * diff


Params = Union[MlpParams, Mapping[str, np.ndarray]]


def sgd_step(params: Params, grads: Mapping[str, np.ndarray], lr: float) -> Params:
    """Return ``params - lr * grads``; parameters without a gradient are kept."""
    named = params.parameters() if isinstance(params, MlpParams) else params
    updated = {}
    for name, value in named.items():
        if name not in grads:
            updated[name] = value
            continue
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(value):
            raise DimensionError(
                f"gradient for {name} has shape {g.shape}, parameter {np.shape(value)}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient", parameter=name)
        updated[name] = value - lr * g if lr else np.array(value, dtype=np.float64, copy=True)
    if isinstance(params, MlpParams):
        return params.with_parameters(updated)
    return updated


def laplace_sample(rng: np.random.Generator, scale: float, shape) -> np.ndarray:
    """I.i.d. Laplace(0, scale) draws by inverse-CDF transform."""
    if not scale >= 0:
        raise DomainError(f"Laplace scale must be non-negative, got {scale}")
    if scale == 0:
        return np.zeros(shape)
    # uniform on the open interval (0, 1) so that |u| < 0.5 strictly
    v = (rng.integers(0, 2**52, size=shape) + 0.5) / 2.0**52
    u = v - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
