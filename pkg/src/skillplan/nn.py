"""Minimal dense/conv network stack on numpy.

Forward passes cache what the matching backward pass needs; gradients are
hand-derived and checked against finite differences in the test suite.
Parameters live in the layer objects and can be flattened to a single
vector, which is what the evolutionary policy search mutates.
"""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np

__all__ = [
    "Layer",
    "Dense",
    "Conv2d",
    "Flatten",
    "Tanh",
    "Sigmoid",
    "Relu",
    "Sequential",
    "Adam",
]


class Layer:
    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    """Affine map (N, in) -> (N, out), Glorot-uniform init."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        self.in_dim = in_dim
        self.out_dim = out_dim
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        r = np.random.default_rng(0) if rng is None else rng
        self.w = r.uniform(-limit, limit, size=(in_dim, out_dim))
        self.b = np.zeros(out_dim)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def params(self) -> list[np.ndarray]:
        return [self.w, self.b]

    def grads(self) -> list[np.ndarray]:
        return [self.dw, self.db]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._x is not None, "backward before forward"
        self.dw[...] = self._x.T @ grad
        self.db[...] = grad.sum(axis=0)
        return grad @ self.w.T

    def config(self) -> dict:
        return {"kind": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim}


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int) -> np.ndarray:
    n, c, h, w = shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    return out


class Conv2d(Layer):
    """Valid-padding convolution on (N, C, H, W) via im2col."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        rng: np.random.Generator | None = None,
    ):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        r = np.random.default_rng(0) if rng is None else rng
        self.w = r.uniform(-limit, limit, size=(out_channels, fan_in))
        self.b = np.zeros(out_channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cols: np.ndarray | None = None
        self._xshape: tuple | None = None

    def params(self) -> list[np.ndarray]:
        return [self.w, self.b]

    def grads(self) -> list[np.ndarray]:
        return [self.dw, self.db]

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        self._xshape = x.shape
        self._cols = _im2col(x, self.kernel, self.kernel, self.stride)
        oh = (h - self.kernel) // self.stride + 1
        ow = (w - self.kernel) // self.stride + 1
        out = np.einsum("of,nfl->nol", self.w, self._cols) + self.b[None, :, None]
        return out.reshape(n, self.out_channels, oh, ow)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._cols is not None and self._xshape is not None
        n = grad.shape[0]
        g = grad.reshape(n, self.out_channels, -1)
        self.dw[...] = np.einsum("nol,nfl->of", g, self._cols)
        self.db[...] = g.sum(axis=(0, 2))
        dcols = np.einsum("of,nol->nfl", self.w, g)
        return _col2im(dcols, self._xshape, self.kernel, self.kernel, self.stride)

    def config(self) -> dict:
        return {
            "kind": "conv2d",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
        }


class Flatten(Layer):
    def __init__(self) -> None:
        self._shape: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._shape is not None
        return grad.reshape(self._shape)

    def config(self) -> dict:
        return {"kind": "flatten"}


class Tanh(Layer):
    def __init__(self) -> None:
        self._y: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._y is not None
        return grad * (1.0 - self._y**2)

    def config(self) -> dict:
        return {"kind": "tanh"}


class Sigmoid(Layer):
    def __init__(self) -> None:
        self._y: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, None, 60.0))),
                           np.exp(np.clip(x, -60.0, None)) /
                           (1.0 + np.exp(np.clip(x, -60.0, None))))
        return self._y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._y is not None
        return grad * self._y * (1.0 - self._y)

    def config(self) -> dict:
        return {"kind": "sigmoid"}


class Relu(Layer):
    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        assert self._mask is not None
        return grad * self._mask

    def config(self) -> dict:
        return {"kind": "relu"}


_LAYER_KINDS = {
    "dense": lambda c, rng: Dense(c["in_dim"], c["out_dim"], rng),
    "conv2d": lambda c, rng: Conv2d(
        c["in_channels"], c["out_channels"], c["kernel"], c["stride"], rng
    ),
    "flatten": lambda c, rng: Flatten(),
    "tanh": lambda c, rng: Tanh(),
    "sigmoid": lambda c, rng: Sigmoid(),
    "relu": lambda c, rng: Relu(),
}


class Sequential(Layer):
    """Layer chain with flat parameter-vector access."""

    def __init__(self, layers: Iterable[Layer]):
        self.layers = list(layers)

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def get_flat(self) -> np.ndarray:
        if not self.params():
            return np.empty(0)
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_params:
            raise ValueError(f"expected {self.num_params} params, got {vec.size}")
        i = 0
        for p in self.params():
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size

    def config(self) -> dict:
        return {"kind": "sequential", "layers": [l.config() for l in self.layers]}

    @staticmethod
    def from_config(cfg: dict, rng: np.random.Generator | None = None) -> "Sequential":
        if cfg.get("kind") != "sequential":
            raise ValueError("not a sequential network config")
        r = np.random.default_rng(0) if rng is None else rng
        layers = []
        for lc in cfg["layers"]:
            kind = lc.get("kind")
            if kind not in _LAYER_KINDS:
                raise ValueError(f"unknown layer kind '{kind}'")
            layers.append(_LAYER_KINDS[kind](lc, r))
        return Sequential(layers)


class Adam:
    """Standard Adam update over a network's live parameter arrays."""

    def __init__(self, net: Sequential, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.params()]
        self.v = [np.zeros_like(p) for p in net.params()]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.net.params(), self.net.grads(), self.m, self.v):
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
