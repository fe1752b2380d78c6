"""Dense feed-forward classifier with hand-written backprop, in float64.

Layers are affine maps followed by ReLU, except the last which emits raw
logits. Gradients are returned as a list of ``(dW, db)`` pairs aligned with
``Network.layers``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "identity")

Gradients = list  # list[tuple[np.ndarray, np.ndarray]]


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("layer weight must be (out, in) and bias (out,)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Network:
    layers: list[Layer]
    # bumped on every parameter update so stale forward caches can be detected
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ValueError("adjacent layer dimensions do not chain")
        if self.layers[-1].activation != "identity":
            raise ValueError("the final layer must emit raw logits (identity activation)")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def num_parameters(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def clone(self) -> "Network":
        return copy.deepcopy(self)

    def zeros_like(self) -> Gradients:
        return [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in self.layers]


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_activations: list
    activations: list  # activations[i] is the input to layer i
    network_id: int
    network_version: int


def init_network(input_dim: int, hidden_sizes: Sequence[int], num_classes: int,
                 seed) -> Network:
    """Uniform Glorot initialisation, ``U[-a, a]`` with ``a = sqrt(6 / (in + out))``."""
    rng = np.random.default_rng(seed)
    widths = [int(input_dim), *map(int, hidden_sizes), int(num_classes)]
    if any(w < 1 for w in widths):
        raise ValueError("layer widths must be positive")
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        a = np.sqrt(6.0 / (n_in + n_out))
        act = "identity" if i == len(widths) - 2 else "relu"
        layers.append(Layer(rng.uniform(-a, a, size=(n_out, n_in)), np.zeros(n_out), act))
    return Network(layers)


def forward(net: Network, inputs) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"inputs must have shape (batch, {net.input_dim}), got {x.shape}")
    pre, acts = [], []
    h = x
    for layer in net.layers:
        acts.append(h)
        z = h @ layer.weight.T + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return h, ForwardCache(x, pre, acts, id(net), net.version)


def predict_logits(net: Network, inputs) -> np.ndarray:
    return forward(net, inputs)[0]


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    l = np.asarray(logits, dtype=np.float64)
    shifted = l - l.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    l = np.asarray(logits, dtype=np.float64)
    shifted = l - l.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def backward(net: Network, cache: ForwardCache, logit_gradients) -> Gradients:
    """Reverse-mode gradients of ``sum(logits * logit_gradients)`` w.r.t. every parameter."""
    if cache.network_id != id(net) or cache.network_version != net.version:
        raise ValueError("forward cache is stale or belongs to a different network")
    g = np.asarray(logit_gradients, dtype=np.float64)
    if g.shape != cache.pre_activations[-1].shape:
        raise ValueError("logit_gradients shape does not match the cached forward pass")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            g = g * (cache.pre_activations[i] > 0)
        grads[i] = (g.T @ cache.activations[i], g.sum(axis=0))
        if i > 0:
            g = g @ layer.weight
    return grads


def finite_difference_gradients(net: Network, loss: Callable[[Network], float],
                                epsilon: float = 1e-6) -> Gradients:
    """Central differences of ``loss`` for every weight and bias (the net is restored)."""
    grads = net.zeros_like()
    for layer, (gw, gb) in zip(net.layers, grads):
        for param, out in ((layer.weight, gw), (layer.bias, gb)):
            flat, out_flat = param.reshape(-1), out.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + epsilon
                f_plus = loss(net)
                flat[j] = orig - epsilon
                f_minus = loss(net)
                flat[j] = orig
                out_flat[j] = (f_plus - f_minus) / (2.0 * epsilon)
    return grads


def sgd_step(net: Network, gradients: Gradients, step_size: float, momentum: float = 0.0,
             velocity: Gradients | None = None) -> Network:
    """Heavy-ball SGD: ``v <- momentum*v + g``, ``theta <- theta - step_size*v``.

    Parameters and ``velocity`` are updated in place; pass the same velocity
    buffers on every call.
    """
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    if len(gradients) != len(net.layers):
        raise ValueError("gradient list does not match the network")
    if velocity is None:
        velocity = net.zeros_like()
    for layer, (gw, gb), (vw, vb) in zip(net.layers, gradients, velocity):
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise ValueError("gradient shapes do not match the network")
        vw *= momentum
        vw += gw
        vb *= momentum
        vb += gb
        layer.weight -= step_size * vw
        layer.bias -= step_size * vb
    net.version += 1
    return net


def save_network(net: Network, path) -> None:
    arrays = {"format_version": np.array(CHECKPOINT_VERSION),
              "activations": np.array([l.activation for l in net.layers])}
    for i, layer in enumerate(net.layers):
        arrays[f"weight_{i}"] = layer.weight
        arrays[f"bias_{i}"] = layer.bias
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_network(path) -> Network:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        acts = [str(a) for a in data["activations"]]
        layers = [Layer(data[f"weight_{i}"].copy(), data[f"bias_{i}"].copy(), act)
                  for i, act in enumerate(acts)]
    return Network(layers)
