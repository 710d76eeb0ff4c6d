"""Small numpy layer library with hand-written backward passes.

Every layer keeps a stack of forward caches, so the same layer can be applied
several times (a GRU cell unrolled over a window) and then back-propagated in
reverse order. Gradients accumulate into ``Param.grad`` until ``zero_grad``.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class StateError(RuntimeError):
    pass


class NumericError(FloatingPointError):
    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message)
        self.layer_index = layer_index


class Param:
    """A parameter array plus its accumulated gradient."""

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def sigmoid(x):
    # split by sign to avoid overflow in exp
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z, axis: int = -1):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis: int = -1):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")


def _activate(a, kind):
    if kind == "identity":
        return a
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "tanh":
        return np.tanh(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(a, y, kind):
    """Derivative of the activation, given pre-activation ``a`` and output ``y``."""
    if kind == "identity":
        return np.ones_like(a)
    if kind == "relu":
        return (a > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "sigmoid":
        return y * (1.0 - y)
    raise ValueError(f"unknown activation {kind!r}")


class Layer:
    def __init__(self):
        self._cache: list = []

    def params(self) -> list[Param]:
        raise NotImplementedError

    def _pop(self):
        if not self._cache:
            raise StateError(f"{type(self).__name__}.backward called without a cached forward pass")
        return self._cache.pop()

    def clear_cache(self):
        self._cache.clear()


class Dense(Layer):
    """y = activation(x @ W + b) over the last axis of ``x``."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: np.random.Generator | None = None, name: str = "dense"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = Param(glorot_uniform(rng, in_dim, out_dim), f"{name}.W")
        self.b = Param(np.zeros(out_dim), f"{name}.b")
        self.activation = activation
        self.name = name

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.W.value.shape[0]:
            raise DimensionError(
                f"{self.name}: input has {x.shape[-1]} columns, weights expect {self.W.value.shape[0]}")
        a = x @ self.W.value + self.b.value
        y = _activate(a, self.activation)
        self._cache.append((x, a, y))
        return y

    def backward(self, dy):
        x, a, y = self._pop()
        da = np.asarray(dy, dtype=np.float64) * _activation_grad(a, y, self.activation)
        x2 = x.reshape(-1, x.shape[-1])
        da2 = da.reshape(-1, da.shape[-1])
        self.W.grad += x2.T @ da2
        self.b.grad += da2.sum(axis=0)
        return da @ self.W.value.T


class GraphConv(Layer):
    """relu(norm_adj @ x @ W + b); ``x`` has nodes on the second-to-last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 name: str = "gcn"):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = Param(glorot_uniform(rng, in_dim, out_dim), f"{name}.W")
        self.b = Param(np.zeros(out_dim), f"{name}.b")
        self.name = name

    def params(self):
        return [self.W, self.b]

    def forward(self, x, norm_adj):
        x = np.asarray(x, dtype=np.float64)
        norm_adj = np.asarray(norm_adj, dtype=np.float64)
        if norm_adj.ndim != 2 or norm_adj.shape[0] != norm_adj.shape[1]:
            raise DimensionError(f"{self.name}: adjacency must be square, got {norm_adj.shape}")
        if x.ndim < 2 or x.shape[-2] != norm_adj.shape[0]:
            raise DimensionError(f"{self.name}: x has {x.shape[-2] if x.ndim >= 2 else '?'} rows, "
                                 f"adjacency is {norm_adj.shape[0]}x{norm_adj.shape[0]}")
        if x.shape[-1] != self.W.value.shape[0]:
            raise DimensionError(f"{self.name}: feature width {x.shape[-1]} != {self.W.value.shape[0]}")
        ax = norm_adj @ x
        a = ax @ self.W.value + self.b.value
        y = np.maximum(a, 0.0)
        self._cache.append((norm_adj, ax, a))
        return y

    def backward(self, dy):
        norm_adj, ax, a = self._pop()
        da = np.asarray(dy, dtype=np.float64) * (a > 0)
        ax2 = ax.reshape(-1, ax.shape[-1])
        da2 = da.reshape(-1, da.shape[-1])
        self.W.grad += ax2.T @ da2
        self.b.grad += da2.sum(axis=0)
        dax = da @ self.W.value.T
        return norm_adj.T @ dax


class GRUCell(Layer):
    """Gated recurrent unit.

    z = sigmoid(x Wz + h Uz + bz)
    r = sigmoid(x Wr + h Ur + br)
    c = tanh(x Wh + (r * h) Uh + bh)
    h' = (1 - z) * h + z * c
    """

    GATES = ("z", "r", "h")

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator | None = None,
                 name: str = "gru"):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.name = name
        self.W = {g: Param(glorot_uniform(rng, in_dim, hidden_dim), f"{name}.W{g}") for g in self.GATES}
        self.U = {g: Param(glorot_uniform(rng, hidden_dim, hidden_dim), f"{name}.U{g}") for g in self.GATES}
        self.b = {g: Param(np.zeros(hidden_dim), f"{name}.b{g}") for g in self.GATES}

    def params(self):
        out = []
        for g in self.GATES:
            out += [self.W[g], self.U[g], self.b[g]]
        return out

    def forward(self, x, h):
        x = np.asarray(x, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"{self.name}: input width {x.shape[-1]} != {self.in_dim}")
        if h.shape[-1] != self.hidden_dim or h.shape[:-1] != x.shape[:-1]:
            raise DimensionError(f"{self.name}: hidden shape {h.shape} incompatible with input {x.shape}")
        W, U, b = self.W, self.U, self.b
        z = sigmoid(x @ W["z"].value + h @ U["z"].value + b["z"].value)
        r = sigmoid(x @ W["r"].value + h @ U["r"].value + b["r"].value)
        rh = r * h
        c = np.tanh(x @ W["h"].value + rh @ U["h"].value + b["h"].value)
        h_new = (1.0 - z) * h + z * c
        self._cache.append((x, h, z, r, rh, c))
        return h_new

    def backward(self, dh_new):
        """Returns (dx, dh_prev)."""
        x, h, z, r, rh, c = self._pop()
        dh_new = np.asarray(dh_new, dtype=np.float64)
        W, U, b = self.W, self.U, self.b
        x2 = x.reshape(-1, x.shape[-1])
        h2 = h.reshape(-1, h.shape[-1])

        dc = dh_new * z
        dz = dh_new * (c - h)
        dh = dh_new * (1.0 - z)

        dac = dc * (1.0 - c * c)
        dac2 = dac.reshape(-1, dac.shape[-1])
        W["h"].grad += x2.T @ dac2
        U["h"].grad += rh.reshape(-1, rh.shape[-1]).T @ dac2
        b["h"].grad += dac2.sum(axis=0)
        drh = dac @ U["h"].value.T
        dr = drh * h
        dh += drh * r

        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        for g, da in (("z", daz), ("r", dar)):
            da2 = da.reshape(-1, da.shape[-1])
            W[g].grad += x2.T @ da2
            U[g].grad += h2.T @ da2
            b[g].grad += da2.sum(axis=0)
            dh += da @ U[g].value.T

        dx = dac @ W["h"].value.T + daz @ W["z"].value.T + dar @ W["r"].value.T
        return dx, dh


class MLP:
    """Stack of Dense layers; ``backward`` walks the layers in reverse."""

    def __init__(self, sizes: Sequence[int], hidden_activation: str = "tanh",
                 out_activation: str = "identity", rng: np.random.Generator | None = None,
                 name: str = "mlp"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = out_activation if i == len(sizes) - 2 else hidden_activation
            self.layers.append(Dense(a, b, act, rng=rng, name=f"{name}.{i}"))

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def __call__(self, x):
        # inference without touching the caches
        for layer in self.layers:
            x = _activate(np.asarray(x, dtype=np.float64) @ layer.W.value + layer.b.value,
                          layer.activation)
        return x

    def clear_cache(self):
        for layer in self.layers:
            layer.clear_cache()


def zero_grad(params: Iterable[Param]):
    for p in params:
        p.grad[...] = 0.0


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_gradients(params: Sequence[Param], max_norm: float) -> float:
    """Rescale all grads in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(p.grad for p in params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


class Adam:
    def __init__(self, params: Sequence[Param], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {i} ({p.name})", layer_index=i)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def flatten_params(params: Sequence[Param]) -> np.ndarray:
    return np.concatenate([p.value.ravel() for p in params]) if params else np.zeros(0)
