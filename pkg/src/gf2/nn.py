"""Building blocks for the generators and critics.

Layers follow the equalized-learning-rate convention: weights are stored
unit-normal and rescaled by gain/sqrt(fan_in) at use time, so Adam sees
comparable gradient magnitudes everywhere.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor

LEAK = 0.2  # leaky-ReLU slope used throughout


class Module:
    """Named-parameter container; parameters() walks children recursively."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def register(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module"):
        self._children[name] = module
        return module

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self._params)
        for cname, child in self._children.items():
            for pname, p in child.parameters().items():
                out[f"{cname}.{pname}"] = p
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())


class Affine(Module):
    """Fully connected layer with runtime weight scaling."""

    def __init__(self, rng: Rng, n_in: int, n_out: int, bias: bool = True,
                 gain: float = 1.0, lr_mul: float = 1.0):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.scale = gain * lr_mul / math.sqrt(n_in)
        self.lr_mul = lr_mul
        self.w = self.register("w", rng.normal((n_in, n_out), std=1.0 / lr_mul))
        self.b = self.register("b", np.zeros(n_out, dtype=np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, T.mul(self.w, self.scale))
        if self.b is not None:
            out = T.add(out, T.mul(self.b, self.lr_mul))
        return out


class Conv3x3(Module):
    def __init__(self, rng: Rng, c_in: int, c_out: int, gain: float = 1.0):
        super().__init__()
        self.scale = gain / math.sqrt(c_in * 9)
        self.w = self.register("w", rng.normal((c_out, c_in, 3, 3)))
        self.b = self.register("b", np.zeros(c_out, dtype=np.float32))

    def __call__(self, x: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
        out = T.conv2d(x, T.mul(self.w, self.scale), stride=stride, pad=pad)
        return T.add(out, T.reshape(self.b, (1, -1, 1, 1)))


class MappingNet(Module):
    """Latent mapping: `depth` affine + leaky-ReLU layers with residual links
    after the first (keeps the raw conditioning visible at the output)."""

    def __init__(self, rng: Rng, d_in: int, d_out: int, depth: int = 8, lr_mul: float = 0.01):
        super().__init__()
        self.layers = []
        d = d_in
        for i in range(depth):
            layer = Affine(rng.child(f"fc{i}"), d, d_out, gain=math.sqrt(2.0), lr_mul=lr_mul)
            self.add_child(f"fc{i}", layer)
            self.layers.append(layer)
            d = d_out

    def __call__(self, z: Tensor) -> Tensor:
        h = T.leaky_relu(self.layers[0](z), LEAK)
        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        for layer in self.layers[1:]:
            h = T.mul(T.add(T.leaky_relu(layer(h), LEAK), h), inv_sqrt2)
        return h


def positional_encoding(h: int, w: int, dim: int) -> np.ndarray:
    """Sinusoidal 2-axis table, shape (h*w, dim); x and y each get dim//2."""
    half = dim // 2
    quarter = max(half // 2, 1)
    freqs = np.exp(-np.arange(quarter) / quarter * math.log(1e4)).astype(np.float32)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = np.zeros((h * w, dim), dtype=np.float32)
    xa = xs.reshape(-1, 1) * freqs
    ya = ys.reshape(-1, 1) * freqs
    out[:, 0:quarter] = np.sin(xa)
    out[:, quarter : 2 * quarter] = np.cos(xa)
    base = 2 * quarter
    out[:, base : base + quarter] = np.sin(ya)
    out[:, base + quarter : base + 2 * quarter] = np.cos(ya)
    return out


_PE_CACHE: dict[tuple, np.ndarray] = {}


def pe_table(h: int, w: int, dim: int) -> np.ndarray:
    key = (h, w, dim)
    if key not in _PE_CACHE:
        _PE_CACHE[key] = positional_encoding(h, w, dim)
    return _PE_CACHE[key]


def minibatch_stddev(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Append one channel holding the batch-wide feature stddev (B,C,H,W) -> (B,C+1,H,W)."""
    b = x.shape[0]
    mu = T.tmean(x, axis=0, keepdims=True)
    var = T.tmean(T.square(T.sub(x, mu)), axis=0, keepdims=True)
    sd = T.tmean(T.tsqrt(T.add(var, eps)))  # scalar
    chan = T.broadcast_to(T.reshape(sd, (1, 1, 1, 1)), (b, 1, x.shape[2], x.shape[3]))
    return T.concat([x, chan], axis=1)


def nchw_to_flat(x: Tensor) -> Tensor:
    """(B,C,H,W) -> (B,H*W,C)."""
    b, c, h, w = x.shape
    return T.reshape(T.transpose(x, (0, 2, 3, 1)), (b, h * w, c))


def flat_to_nchw(x: Tensor, h: int, w: int) -> Tensor:
    """(B,H*W,C) -> (B,C,H,W)."""
    b, _, c = x.shape
    return T.transpose(T.reshape(x, (b, h, w, c)), (0, 3, 1, 2))


class NoiseInjection(Module):
    """Adds per-pixel unit noise scaled by a learned per-channel weight."""

    def __init__(self, channels: int):
        super().__init__()
        self.scale = self.register("scale", np.zeros((1, channels, 1, 1), dtype=np.float32))

    def __call__(self, x: Tensor, rng: Rng) -> Tensor:
        n = rng.normal((x.shape[0], 1, x.shape[2], x.shape[3]))
        return T.add(x, T.mul(self.scale, Tensor(n)))
