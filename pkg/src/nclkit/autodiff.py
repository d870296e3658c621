"""Reverse-mode automatic differentiation on dense float64 tensors.

A Graph is a dynamic tape: every operation appends a node holding the cached
forward value and a closure that maps the output gradient to parent
gradients.  Parameters live in a Params registry shared across graphs, so one
set of buffers trains over many per-batch tapes.  Everything is float64 and
single-threaded; identical seeds give bit-identical trajectories.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import GradCheckError

_MAGIC = b"NCKP"
_VERSION = 1


class Params:
    """Named parameter buffers plus accumulated gradients."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.order: list[str] = []

    def add(self, name, array):
        if name in self.values:
            raise ValueError(f"parameter {name!r} already registered")
        arr = np.asarray(array, dtype=np.float64)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.order.append(name)
        return arr

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def copy_values(self):
        return {k: v.copy() for k, v in self.values.items()}

    def load_values(self, snapshot):
        for k, v in snapshot.items():
            self.values[k][...] = v

    def count(self):
        return sum(v.size for v in self.values.values())

    # ---- flat binary checkpoints: magic, version, then per-parameter
    # (name length u32, utf-8 name, rank u32, extents u32 each, f64 LE values)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", _VERSION, len(self.order)))
            for name in self.order:
                arr = self.values[name]
                raw = name.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        params = cls()
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError(f"{path} is not a parameter checkpoint")
            version, count = struct.unpack("<II", fh.read(8))
            if version != _VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            for _ in range(count):
                (nlen,) = struct.unpack("<I", fh.read(4))
                name = fh.read(nlen).decode("utf-8")
                (rank,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
                n = int(np.prod(shape)) if rank else 1
                data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
                params.add(name, data.copy())
        return params


class Tensor:
    __slots__ = ("graph", "nid")

    def __init__(self, graph, nid):
        self.graph = graph
        self.nid = nid

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.nid][2]

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return self.graph.add(self, self.graph.lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.sub(self, self.graph.lift(other))

    def __rsub__(self, other):
        return self.graph.sub(self.graph.lift(other), self)

    def __mul__(self, other):
        return self.graph.mul(self, self.graph.lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.graph.div(self, self.graph.lift(other))

    def __rtruediv__(self, other):
        return self.graph.div(self.graph.lift(other), self)

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Graph:
    """One differentiation tape; nodes are (op, parent ids, value, vjp)."""

    def __init__(self, params: Params | None = None):
        self.params = params
        self.nodes: list = []          # (op, parents tuple, value, vjp or None)
        self._param_nodes: dict[str, Tensor] = {}
        self._param_of_node: dict[int, str] = {}
        self.leaf_grads: dict[int, np.ndarray] = {}
        self._tracked: set[int] = set()

    # ---- leaves

    def _node(self, op, parents, value, vjp=None):
        self.nodes.append((op, parents, np.asarray(value, dtype=np.float64), vjp))
        return Tensor(self, len(self.nodes) - 1)

    def const(self, value):
        return self._node("const", (), value)

    def lift(self, value):
        if isinstance(value, Tensor):
            return value
        return self.const(value)

    def input(self, value, track=False):
        t = self._node("input", (), value)
        if track:
            self._tracked.add(t.nid)
        return t

    def param(self, name) -> Tensor:
        if self.params is None or name not in self.params.values:
            raise KeyError(f"unknown parameter {name!r}")
        cached = self._param_nodes.get(name)
        if cached is not None:
            return cached
        t = self._node("param", (), self.params.values[name])
        self._param_nodes[name] = t
        self._param_of_node[t.nid] = name
        return t

    # ---- elementwise and shape ops

    def add(self, a, b):
        va, vb = a.value, b.value
        return self._node("add", (a.nid, b.nid), va + vb,
                          lambda g: (_unbroadcast(g, va.shape), _unbroadcast(g, vb.shape)))

    def sub(self, a, b):
        va, vb = a.value, b.value
        return self._node("sub", (a.nid, b.nid), va - vb,
                          lambda g: (_unbroadcast(g, va.shape), _unbroadcast(-g, vb.shape)))

    def mul(self, a, b):
        va, vb = a.value, b.value
        return self._node("mul", (a.nid, b.nid), va * vb,
                          lambda g: (_unbroadcast(g * vb, va.shape),
                                     _unbroadcast(g * va, vb.shape)))

    def div(self, a, b):
        va, vb = a.value, b.value
        return self._node("div", (a.nid, b.nid), va / vb,
                          lambda g: (_unbroadcast(g / vb, va.shape),
                                     _unbroadcast(-g * va / (vb * vb), vb.shape)))

    def neg(self, a):
        return self._node("neg", (a.nid,), -a.value, lambda g: (-g,))

    def matmul(self, a, b):
        va, vb = a.value, b.value
        if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
            raise ValueError(f"matmul shapes {va.shape} and {vb.shape} do not conform")
        return self._node("matmul", (a.nid, b.nid), va @ vb,
                          lambda g: (g @ vb.T, va.T @ g))

    def relu(self, a):
        va = a.value
        return self._node("relu", (a.nid,), np.maximum(va, 0.0),
                          lambda g: (g * (va > 0.0),))

    def log(self, a):
        va = a.value
        return self._node("log", (a.nid,), np.log(va), lambda g: (g / va,))

    def exp(self, a):
        out = np.exp(a.value)
        return self._node("exp", (a.nid,), out, lambda g: (g * out,))

    def softmax(self, a, axis=-1):
        va = a.value
        if va.shape == () or va.shape[axis] == 0:
            raise ValueError("softmax over an empty axis")
        shifted = va - va.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)

        def vjp(g):
            dot = (g * out).sum(axis=axis, keepdims=True)
            return (out * (g - dot),)

        return self._node("softmax", (a.nid,), out, vjp)

    def take(self, a, indices):
        """Pick elements of row-major-flattened `a` at integer indices."""
        idx = np.asarray(indices, dtype=np.int64)
        flat = a.value.reshape(-1)
        shape = a.value.shape

        def vjp(g):
            acc = np.zeros(flat.shape)
            np.add.at(acc, idx.reshape(-1), np.asarray(g, dtype=np.float64).reshape(-1))
            return (acc.reshape(shape),)

        return self._node("take", (a.nid,), flat[idx], vjp)

    def reduce_sum(self, a, axis=None, keepdims=False):
        va = a.value

        def vjp(g):
            if axis is None:
                return (np.full(va.shape, g),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, va.shape).copy(),)

        return self._node("reduce_sum", (a.nid,),
                          va.sum(axis=axis, keepdims=keepdims), vjp)

    def reduce_mean(self, a, axis=None):
        va = a.value
        n = va.size if axis is None else va.shape[axis]

        def vjp(g):
            if axis is None:
                return (np.full(va.shape, g / n),)
            return (np.broadcast_to(np.expand_dims(g, axis), va.shape) / n,)

        return self._node("reduce_mean", (a.nid,), va.mean(axis=axis), vjp)

    def maximum(self, a, b):
        va, vb = a.value, b.value
        pick_a = va >= vb  # ties give the gradient to the first argument
        return self._node("maximum", (a.nid, b.nid), np.maximum(va, vb),
                          lambda g: (_unbroadcast(g * pick_a, va.shape),
                                     _unbroadcast(g * ~pick_a, vb.shape)))

    def minimum(self, a, b):
        va, vb = a.value, b.value
        pick_a = va <= vb
        return self._node("minimum", (a.nid, b.nid), np.minimum(va, vb),
                          lambda g: (_unbroadcast(g * pick_a, va.shape),
                                     _unbroadcast(g * ~pick_a, vb.shape)))

    def clamp(self, a, lo, hi):
        va = a.value
        inside = (va > lo) & (va < hi)
        return self._node("clamp", (a.nid,), np.clip(va, lo, hi),
                          lambda g: (g * inside,))

    def reshape(self, a, shape):
        va = a.value
        return self._node("reshape", (a.nid,), va.reshape(shape),
                          lambda g: (g.reshape(va.shape),))

    def concat(self, tensors, axis=0):
        values = [t.value for t in tensors]
        sizes = [v.shape[axis] for v in values]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g):
            return tuple(np.split(g, splits, axis=axis))

        return self._node("concat", tuple(t.nid for t in tensors),
                          np.concatenate(values, axis=axis), vjp)

    # ---- backward

    def backward(self, loss: Tensor, seed=None):
        """Accumulate dloss/dparam into the registry for a scalar loss."""
        value = loss.value
        if value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {value.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.nid] = (np.ones_like(value) if seed is None
                           else np.asarray(seed, dtype=np.float64))
        for nid in range(loss.nid, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            op, parents, _, vjp = self.nodes[nid]
            if op == "param":
                self.params.grads[self._param_of_node[nid]] += g
                continue
            if op in ("const", "input"):
                if nid in self._tracked:
                    acc = self.leaf_grads.get(nid)
                    self.leaf_grads[nid] = g.copy() if acc is None else acc + g
                continue
            for pid, pg in zip(parents, vjp(g)):
                if grads[pid] is None:
                    grads[pid] = np.asarray(pg, dtype=np.float64).copy()
                else:
                    grads[pid] += pg

    def grad_of(self, tensor: Tensor):
        return self.leaf_grads.get(tensor.nid)


def grad_check(build, params: Params, eps=1e-5):
    """Max relative error between backward() and central finite differences.

    `build(graph)` must construct and return the scalar loss tensor from the
    parameters registered in `params`.
    """
    params.zero_grad()
    g = Graph(params)
    loss = build(g)
    g.backward(loss)
    analytic = {k: v.copy() for k, v in params.grads.items()}

    worst = 0.0
    for name, buf in params.values.items():
        flat = buf.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = float(build(Graph(params)).value)
            flat[i] = keep - eps
            lo = float(build(Graph(params)).value)
            flat[i] = keep
            fd = (hi - lo) / (2.0 * eps)
            ad = float(analytic[name].reshape(-1)[i])
            if np.isnan(fd) or np.isnan(ad):
                raise GradCheckError(f"NaN gradient for {name}[{i}]")
            worst = max(worst, abs(ad - fd) / max(1.0, abs(fd)))
    return worst
