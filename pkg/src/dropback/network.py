"""Minimal MLP: forward pass, softmax cross-entropy, exact reverse-mode gradients.

Parameter values come from an abstract view so the optimizer decides where
they live; this module never owns weights. Parameter enumeration is fixed:
per layer, weight matrix (out x in, row-major) first, then bias, layers in
order. The global flat index derived from that order keys the init generator
and must never change once runs are recorded.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Protocol

import numpy as np

from .initgen import InitSpec, ParamId, TensorLayout, regen_tensor


class ConfigError(ValueError):
    """Invalid network/run configuration, rejected before any training."""


class NonFiniteGradientError(RuntimeError):
    """A gradient tensor contains NaN or inf."""

    def __init__(self, tensor_index: int):
        self.tensor_index = tensor_index
        super().__init__(f"non-finite gradient in tensor {tensor_index}")


class Activation(Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: Activation

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")


class NetworkSpec:
    """Ordered layers plus the derived tensor table (shape, InitSpec) per tensor.

    Tensor order: [w0, b0, w1, b1, ...]. Weights draw from a normal with
    sigma = 1/sqrt(fan_in); biases start at zero.
    """

    def __init__(self, layers: Iterable[LayerSpec]):
        self.layers = list(layers)
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigError(f"layer dim mismatch: {a.out_dim} feeds {b.in_dim}")
        if self.layers[-1].activation is not Activation.IDENTITY:
            raise ConfigError("final layer must be Identity; the loss applies softmax")
        self.tensors: list[tuple[tuple[int, ...], InitSpec]] = []
        for layer in self.layers:
            self.tensors.append(((layer.out_dim, layer.in_dim), InitSpec.scaled_normal(layer.in_dim)))
            self.tensors.append(((layer.out_dim,), InitSpec.constant(0.0)))
        self.layout = TensorLayout([shape for shape, _ in self.tensors])

    @property
    def param_count(self) -> int:
        return self.layout.total

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    def dims(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    def digest(self) -> str:
        """Stable identity hash over layer dims and activations."""
        text = ";".join(f"{l.in_dim}x{l.out_dim}:{l.activation.value}" for l in self.layers)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def init_tensor(self, seed: int, tensor_index: int) -> np.ndarray:
        shape, spec = self.tensors[tensor_index]
        return regen_tensor(seed, self.layout.bases[tensor_index], shape, spec)


def from_dims(dims: list[int]) -> NetworkSpec:
    """Fully-connected ReLU net with the given layer widths, Identity output."""
    if len(dims) < 2:
        raise ConfigError("need at least input and output dims")
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        act = Activation.IDENTITY if i == len(dims) - 2 else Activation.RELU
        layers.append(LayerSpec(a, b, act))
    return NetworkSpec(layers)


def mnist_100_100() -> NetworkSpec:
    return from_dims([784, 100, 100, 10])


def lenet_300_100() -> NetworkSpec:
    return from_dims([784, 300, 100, 10])


class ParamView(Protocol):
    """Read-only parameter source; pure between optimizer steps."""

    def value(self, pid: ParamId) -> float: ...

    def tensor(self, tensor_index: int) -> np.ndarray: ...


class DenseParams:
    """Concrete ParamView over plain float32 arrays."""

    def __init__(self, spec: NetworkSpec, arrays: list[np.ndarray], dtype=np.float32):
        if len(arrays) != len(spec.tensors):
            raise ConfigError("tensor count mismatch")
        for arr, (shape, _) in zip(arrays, spec.tensors):
            if np.shape(arr) != shape:
                raise ConfigError(f"tensor shape {np.shape(arr)} != {shape}")
        self.spec = spec
        self.arrays = [np.asarray(a, dtype=dtype) for a in arrays]

    @classmethod
    def from_init(cls, spec: NetworkSpec, seed: int) -> "DenseParams":
        return cls(spec, [spec.init_tensor(seed, i) for i in range(len(spec.tensors))])

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "DenseParams":
        return cls(spec, [np.zeros(shape, dtype=np.float32) for shape, _ in spec.tensors])

    def value(self, pid: ParamId) -> float:
        return float(self.arrays[pid.tensor_index].reshape(-1)[pid.flat_offset])

    def tensor(self, tensor_index: int) -> np.ndarray:
        return self.arrays[tensor_index]


class GradientBuffer:
    """Dense per-tensor gradients for one mini-batch, backed by one flat array."""

    def __init__(self, spec: NetworkSpec, dtype=np.float32):
        self.spec = spec
        self.flat = np.zeros(spec.layout.total, dtype=dtype)

    def tensor(self, tensor_index: int) -> np.ndarray:
        layout = self.spec.layout
        base = layout.bases[tensor_index]
        return self.flat[base : base + layout.sizes[tensor_index]].reshape(layout.shapes[tensor_index])

    def check_finite(self) -> None:
        if np.isfinite(self.flat).all():
            return
        layout = self.spec.layout
        for i in range(len(layout.shapes)):
            if not np.isfinite(self.tensor(i)).all():
                raise NonFiniteGradientError(i)


def forward(spec: NetworkSpec, params: ParamView, batch: np.ndarray):
    """Run the net over a (rows, in_dim) batch; returns (logits, cache for backward).

    Dtype follows the inputs: float32 params and batch keep the whole pass in
    float32 (the training configuration); float64 inputs stay float64, which
    the gradient-check oracle relies on.
    """
    x = np.asarray(batch)
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ConfigError(f"batch shape {x.shape} does not feed in_dim {spec.in_dim}")
    inputs = []  # post-activation input to each layer
    pres = []  # pre-activation output of each layer
    weights = []  # materialized once; backward reuses the same arrays
    for i, layer in enumerate(spec.layers):
        w = params.tensor(2 * i)
        b = params.tensor(2 * i + 1)
        inputs.append(x)
        weights.append(w)
        pre = x @ w.T + b
        pres.append(pre)
        x = np.maximum(pre, 0.0) if layer.activation is Activation.RELU else pre
    return x, (inputs, pres, weights)


def loss_softmax_ce(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its logit gradient (softmax - onehot)/n."""
    z = np.asarray(logits)
    y = np.asarray(labels)
    n = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)  # log-sum-exp stabilization
    shifted = z - zmax
    expz = np.exp(shifted)
    sumexp = expz.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sumexp)
    loss = float(-log_probs[np.arange(n), y].mean())
    dlogits = expz / sumexp
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= dlogits.dtype.type(n)
    return loss, dlogits


def backward(spec: NetworkSpec, params: ParamView, cache, dlogits: np.ndarray) -> GradientBuffer:
    """Exact reverse-mode gradients for every tensor, ReLU gates included."""
    inputs, pres, weights = cache
    dpre = np.asarray(dlogits)
    grads = GradientBuffer(spec, dtype=dpre.dtype)
    for i in reversed(range(len(spec.layers))):
        # dlogits arrives post-activation; gate it for hidden ReLU layers
        if spec.layers[i].activation is Activation.RELU:
            dpre = dpre * (pres[i] > 0)
        grads.tensor(2 * i)[...] = dpre.T @ inputs[i]
        grads.tensor(2 * i + 1)[...] = dpre.sum(axis=0)
        if i > 0:
            dpre = dpre @ weights[i]
    return grads


def evaluate(spec: NetworkSpec, params: ParamView, features: np.ndarray, labels: np.ndarray,
             batch_rows: int = 1024) -> float:
    """Fraction of samples whose argmax logit misses the label (ties -> lowest class)."""
    if len(features) == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    wrong = 0
    for start in range(0, len(features), batch_rows):
        block = features[start : start + batch_rows]
        logits, _ = forward(spec, params, block)
        pred = np.argmax(logits, axis=1)
        wrong += int((pred != labels[start : start + batch_rows]).sum())
    return wrong / len(features)
