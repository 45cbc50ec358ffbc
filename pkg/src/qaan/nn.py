"""Dense feed-forward networks with hand-written backpropagation, plus Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

ACTIVATIONS = ("leaky_relu", "sigmoid", "tanh", "softmax", "identity")
LEAKY_SLOPE = 0.2


def log_sigmoid(x):
    """log(sigmoid(x)), finite for all finite x."""
    return log_expit(x)


def log_one_minus_sigmoid(x):
    """log(1 - sigmoid(x)) = log(sigmoid(-x))."""
    return log_expit(-np.asarray(x))


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def xavier_init(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights; variance 2 / (fan_in + fan_out)."""
    fan_in, fan_out = shape
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"invalid weight shape {shape}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def zero_init(shape) -> np.ndarray:
    return np.zeros(shape)


@dataclass
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError("layer weights must be (in, out) with a matching bias")

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


@dataclass
class DenseNet:
    """Stack of dense layers.

    ``feature_tap`` names the layer whose post-activation output is exposed as
    a feature layer; that layer must use a sigmoid so its outputs read as
    firing probabilities.
    """

    layers: list[Layer]
    feature_tap: Optional[int] = None
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"layer dims do not chain: {a.shape} -> {b.shape}")
        if self.feature_tap is not None:
            if not 0 <= self.feature_tap < len(self.layers):
                raise ValueError("feature_tap out of range")
            if self.layers[self.feature_tap].activation != "sigmoid":
                raise ValueError("the tapped feature layer must use a sigmoid activation")

    @classmethod
    def build(cls, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
              feature_tap: Optional[int] = None, slope: float = LEAKY_SLOPE) -> "DenseNet":
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = [Layer(xavier_init((i, o), rng), zero_init(o), act)
                  for i, o, act in zip(sizes[:-1], sizes[1:], activations)]
        return cls(layers, feature_tap=feature_tap, slope=slope)

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers],
                        feature_tap=self.feature_tap, slope=self.slope)


@dataclass
class Cache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    outputs: list[np.ndarray]
    net_id: int
    features: Optional[np.ndarray] = None


def _activate(act: str, x: np.ndarray, slope: float) -> np.ndarray:
    if act == "identity":
        return x
    if act == "sigmoid":
        return expit(x)
    if act == "tanh":
        return np.tanh(x)
    if act == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    return softmax(x)


def _activation_backward(act: str, pre: np.ndarray, out: np.ndarray, grad: np.ndarray, slope: float) -> np.ndarray:
    if act == "identity":
        return grad
    if act == "sigmoid":
        return grad * out * (1.0 - out)
    if act == "tanh":
        return grad * (1.0 - out**2)
    if act == "leaky_relu":
        return np.where(pre > 0, grad, slope * grad)
    # softmax: J^T g = y * (g - <g, y>)
    return out * (grad - (grad * out).sum(axis=-1, keepdims=True))


def forward(net: DenseNet, batch: np.ndarray) -> tuple[np.ndarray, Cache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"expected input of shape (n, {net.input_dim}), got {x.shape}")
    inputs, preacts, outputs = [], [], []
    for layer in net.layers:
        inputs.append(x)
        pre = x @ layer.weights + layer.bias
        x = _activate(layer.activation, pre, net.slope)
        preacts.append(pre)
        outputs.append(x)
    cache = Cache(inputs, preacts, outputs, id(net))
    if net.feature_tap is not None:
        cache.features = outputs[net.feature_tap]
    return x, cache


def backward(net: DenseNet, cache: Cache, output_gradient: np.ndarray,
             wrt_logits: bool = False) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode gradients of a scalar loss.

    ``output_gradient`` is dLoss/d(output), or dLoss/d(last pre-activation)
    when ``wrt_logits`` is set (useful with sigmoid outputs and log-sigmoid
    losses).  Returns gradients aligned with ``net.params()`` and dLoss/dinput.
    """
    if cache.net_id != id(net) or len(cache.inputs) != len(net.layers):
        raise ValueError("stale cache: it was produced by a different network")
    grad = np.asarray(output_gradient, dtype=np.float64)
    if grad.shape != cache.outputs[-1].shape:
        raise ValueError("output gradient shape does not match the forward output")
    grads: list[np.ndarray] = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if not (wrt_logits and i == len(net.layers) - 1):
            grad = _activation_backward(layer.activation, cache.preacts[i], cache.outputs[i], grad, net.slope)
        grads = [cache.inputs[i].T @ grad, grad.sum(axis=0)] + grads
        grad = grad @ layer.weights.T
    return grads, grad


@dataclass
class Adam:
    """Bias-corrected Adam acting in place on a list of parameter arrays."""

    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        if not self.first_moment:
            self.first_moment = [np.zeros_like(p) for p in params]
            self.second_moment = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.first_moment, self.second_moment):
            if p.shape != g.shape or m.shape != p.shape:
                raise ValueError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> list[np.ndarray]:
        return list(self.first_moment) + list(self.second_moment)

    def load_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        half = len(arrays) // 2
        self.first_moment = [np.array(a) for a in arrays[:half]]
        self.second_moment = [np.array(a) for a in arrays[half:]]


def adam_step(state: Adam, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    state.step(params, grads)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def train_classifier(net: DenseNet, x: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
                     epochs: int = 20, batch_size: int = 64, lr: float = 1e-3) -> DenseNet:
    """Fit a net whose last layer is identity-activated logits with softmax cross-entropy."""
    opt = Adam(lr=lr, beta1=0.9, beta2=0.999)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            logits, cache = forward(net, x[idx])
            _, g = softmax_cross_entropy(logits, labels[idx])
            grads, _ = backward(net, cache, g)
            opt.step(net.params(), grads)
    return net
