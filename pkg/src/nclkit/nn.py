"""Model blocks and optimizers for the task models.

Networks are plain MLPs on flattened features; the vision backbones of the
original benchmarks are out of scope, so every model here is widths + relu.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Graph, Params, Tensor


class MLP:
    """Fully connected stack: relu between layers, linear logits at the end."""

    def __init__(self, params: Params, widths, rng, prefix="mlp"):
        if len(widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w <= 0 for w in widths):
            raise ValueError(f"zero-width layer in {widths}")
        self.params = params
        self.prefix = prefix
        self.widths = list(widths)
        self.names = []
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            bound = np.sqrt(1.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=(fan_out,))
            wn, bn = f"{prefix}_w{i}", f"{prefix}_b{i}"
            params.add(wn, w)
            params.add(bn, b)
            self.names += [wn, bn]

    def apply(self, graph: Graph, x: Tensor) -> Tensor:
        h = x
        n_layers = len(self.widths) - 1
        for i in range(n_layers):
            h = graph.matmul(h, graph.param(f"{self.prefix}_w{i}"))
            h = h + graph.param(f"{self.prefix}_b{i}")
            if i < n_layers - 1:
                h = graph.relu(h)
        return h

    def param_count(self):
        return sum(self.params.values[n].size for n in self.names)


def build_mlp(params: Params, widths, rng, prefix="mlp") -> MLP:
    """Register a seeded MLP; same seed, same parameters."""
    return MLP(params, widths, rng, prefix)


def log_softmax(graph: Graph, logits: Tensor, axis=-1) -> Tensor:
    # the shift is detached; it cancels analytically
    shift = graph.const(logits.value.max(axis=axis, keepdims=True))
    z = logits - shift
    lse = graph.log(graph.reduce_sum(graph.exp(z), axis=axis, keepdims=True))
    return z - lse


def cross_entropy(graph: Graph, logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer `targets` under row logits."""
    targets = np.asarray(targets, dtype=np.int64)
    lsm = log_softmax(graph, logits, axis=-1)
    n, c = logits.value.shape
    picked = graph.take(lsm, np.arange(n) * c + targets)
    return graph.neg(graph.reduce_mean(picked))


def logsumexp(graph: Graph, x: Tensor, axis=None) -> Tensor:
    shift_np = x.value.max() if axis is None else x.value.max(axis=axis, keepdims=True)
    shift = graph.const(shift_np)
    inner = graph.reduce_sum(graph.exp(x - shift), axis=axis)
    out = graph.log(inner)
    if axis is None:
        return out + shift
    return out + graph.const(np.squeeze(shift_np, axis=axis))


class SGD:
    def __init__(self, params: Params, lr):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr

    def step(self):
        for name, value in self.params.values.items():
            value -= self.lr * self.params.grads[name]


class Adam:
    def __init__(self, params: Params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.values.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, value in self.params.values.items():
            g = self.params.grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name, params, lr):
    name = name.lower()
    if name == "sgd":
        return SGD(params, lr)
    if name == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {name!r}")
