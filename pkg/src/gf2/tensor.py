"""Dense float32 tensors with reverse-mode automatic differentiation.

Every differentiable computation in this package is built from the
primitives here.  Each op records its parents and a vector-Jacobian
closure on the output tensor; ``backward``/``grad`` walk the resulting
graph in reverse topological order, visiting each node exactly once.

The vjp closures are themselves written in terms of tensor ops, so a
backward pass can optionally build a new graph (``create_graph=True``),
which is what makes gradient penalties differentiable: conv2d ships with
its input-grad / weight-grad sibling primitives and the three refer to
one another for derivatives of any order.

All forward results are checked for NaN/Inf and raise NonFiniteValue;
non-finite values are an error condition, never silent.
"""
from __future__ import annotations

import itertools
import math
from contextlib import contextmanager

import numpy as np

from .errors import BrokenTape, NonFiniteValue, NonScalarLoss, ShapeMismatch

_node_counter = itertools.count()
_grad_enabled = True
_finite_checks = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def finite_checks(enabled: bool):
    global _finite_checks
    prev = _finite_checks
    _finite_checks = enabled
    try:
        yield
    finally:
        _finite_checks = prev


def _as_f32(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    return arr


def _all_finite(arr: np.ndarray) -> bool:
    # single allocation-free reduction: any NaN/Inf poisons the f64 sum
    return math.isfinite(float(arr.sum(dtype=np.float64)))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f32(data)
        if _finite_checks and not _all_finite(self.data):
            raise NonFiniteValue("tensor constructed with non-finite values")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_counter)
        self._parents: tuple = ()
        self._vjp = None
        self.op = "leaf"

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autodiff ------------------------------------------------------------
    def backward(self):
        """Populate .grad on every requires_grad tensor reachable from self."""
        if self.data.shape != ():
            raise NonScalarLoss(f"backward needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise BrokenTape("loss carries no tape (built under no_grad or detached)")
        for node, g in _walk(self, create_graph=False):
            node.grad = g.data if node.grad is None else node.grad + g.data

    # -- operator sugar --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents, vjp, op: str) -> Tensor:
    if _finite_checks and not _all_finite(data):
        raise NonFiniteValue(f"non-finite output of op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == np.float32 else data.astype(np.float32)
    out.grad = None
    out.node_id = next(_node_counter)
    out.op = op
    needs_grad = False
    if _grad_enabled:
        for p in parents:
            if p.requires_grad:
                needs_grad = True
                break
    if needs_grad:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _walk(root: Tensor, create_graph: bool):
    """Reverse-topological cotangent propagation; yields (node, cotangent)."""
    topo: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    cot: dict[int, Tensor] = {id(root): Tensor(np.float32(1.0))}
    for node in reversed(topo):
        g = cot.pop(id(node), None)
        if g is None:
            continue
        yield node, g
        if node._vjp is None:
            continue
        if create_graph:
            parent_gs = node._vjp(g)
        else:
            # forward already validated every activation; skip re-checking
            # the derived cotangents on the fast path
            with no_grad(), finite_checks(False):
                parent_gs = node._vjp(g)
        for p, pg in zip(node._parents, parent_gs):
            if pg is None or not p.requires_grad:
                continue
            if pg.data.shape != p.data.shape:
                raise ShapeMismatch(
                    f"vjp of '{node.op}' produced {pg.data.shape} for parent {p.data.shape}"
                )
            prev = cot.get(id(p))
            cot[id(p)] = pg if prev is None else add(prev, pg)


def grad(output: Tensor, wrt, create_graph: bool = False) -> list:
    """Functional gradient of a scalar output w.r.t. a list of tensors.

    With create_graph=True the returned tensors carry their own graph, so
    expressions of the gradient (e.g. a gradient penalty) stay differentiable.
    """
    if output.data.shape != ():
        raise NonScalarLoss(f"grad needs a scalar output, got shape {output.shape}")
    wanted = {id(w): i for i, w in enumerate(wrt)}
    result: list = [None] * len(wrt)
    for node, g in _walk(output, create_graph=create_graph):
        if id(node) in wanted:
            i = wanted[id(node)]
            result[i] = g if result[i] is None else add(result[i], g)
    return result


# -- broadcasting helpers ------------------------------------------------------


def _sum_to(t: Tensor, shape) -> Tensor:
    """Reduce a broadcasted tensor back to `shape`."""
    if t.data.shape == tuple(shape):
        return t
    extra = t.data.ndim - len(shape)
    axes = list(range(extra))
    for i, s in enumerate(shape):
        if s == 1 and t.data.shape[extra + i] != 1:
            axes.append(extra + i)
    out = tsum(t, axis=tuple(axes), keepdims=True) if axes else t
    return reshape(out, tuple(shape))


def broadcast_to(t, shape) -> Tensor:
    t = as_tensor(t)
    data = np.broadcast_to(t.data, shape).copy()
    src_shape = t.data.shape
    return _make(data, (t,), lambda g: (_sum_to(g, src_shape),), "broadcast")


# -- elementwise binary ops ----------------------------------------------------


def add(a, b) -> Tensor:
    if isinstance(b, (int, float)) and b == 0.0:
        return as_tensor(a)
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_sum_to(g, sa), _sum_to(g, sb)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_sum_to(g, sa), _sum_to(mul(g, -1.0), sb)),
        "sub",
    )


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and b == 1.0:
        return as_tensor(a)
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_sum_to(mul(g, b), sa), _sum_to(mul(g, a), sb)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape

    def vjp(g):
        ga = _sum_to(div(g, b), sa)
        gb = _sum_to(mul(div(mul(g, a), mul(b, b)), -1.0), sb)
        return ga, gb

    return _make(a.data / b.data, (a, b), vjp, "div")


def maximum(a, b) -> Tensor:
    # subgradient routes to `a` on ties
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    take_a = (a.data >= b.data).astype(np.float32)

    def vjp(g):
        m = Tensor(take_a)
        return (_sum_to(mul(g, m), sa), _sum_to(mul(g, sub(1.0, m)), sb))

    return _make(np.maximum(a.data, b.data), (a, b), vjp, "maximum")


# -- elementwise unary ops -----------------------------------------------------


def texp(a) -> Tensor:
    a = as_tensor(a)
    out = _make(np.exp(a.data), (a,), None, "exp")
    out._vjp = (lambda g: (mul(g, out),)) if out.requires_grad else None
    return out


def tlog(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (div(g, a),), "log")


def tsqrt(a) -> Tensor:
    a = as_tensor(a)
    out = _make(np.sqrt(a.data), (a,), None, "sqrt")
    out._vjp = (lambda g: (div(g, mul(out, 2.0)),)) if out.requires_grad else None
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = _make(np.tanh(a.data), (a,), None, "tanh")
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, sub(1.0, mul(out, out))),)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = np.where(
        a.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(a.data))),
        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))),
    ).astype(np.float32)
    out = _make(data, (a,), None, "sigmoid")
    if out.requires_grad:
        out._vjp = lambda g: (mul(g, mul(out, sub(1.0, out))),)
    return out


def softplus(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    return _make(data.astype(np.float32), (a,), lambda g: (mul(g, sigmoid(a)),), "softplus")


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)
    slope = np.where(a.data > 0, 1.0, alpha).astype(np.float32)
    return _make(a.data * slope, (a,), lambda g: (mul(g, Tensor(slope)),), "leaky_relu")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data).astype(np.float32)
    return _make(np.abs(a.data), (a,), lambda g: (mul(g, Tensor(sign)),), "abs")


def square(a) -> Tensor:
    a = as_tensor(a)
    return mul(a, a)


# -- reductions ------------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    src_shape = a.data.shape
    if axis is None:
        axes = tuple(range(a.data.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.data.ndim,)
    else:
        axes = tuple(ax % a.data.ndim for ax in axis)
    data = a.data.sum(axis=axes, keepdims=keepdims, dtype=np.float32)

    def vjp(g):
        if not keepdims:
            kshape = list(src_shape)
            for ax in axes:
                kshape[ax] = 1
            g = reshape(g, tuple(kshape))
        return (broadcast_to(g, src_shape),)

    return _make(np.asarray(data, dtype=np.float32), (a,), vjp, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax % a.data.ndim]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def softmax(a, axis: int = -1) -> Tensor:
    """Stable softmax along one axis; rows sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    out = _make(data.astype(np.float32), (a,), None, "softmax")
    if out.requires_grad:
        def vjp(g):
            inner = tsum(mul(g, out), axis=axis, keepdims=True)
            return (mul(out, sub(g, inner)),)

        out._vjp = vjp
    return out


def layernorm(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """(x - mu) / sqrt(var + eps) along `axis`; eps guards constant slices."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    a = as_tensor(a)
    mu = tmean(a, axis=axis, keepdims=True)
    centered = sub(a, mu)
    var = tmean(mul(centered, centered), axis=axis, keepdims=True)
    return div(centered, tsqrt(add(var, eps)))


# -- shape ops -------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, src),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (transpose(g, inv),), "transpose")


def swap_last2(a) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].data.ndim
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        outs = []
        for i in range(len(tensors)):
            key = [slice(None)] * g.data.ndim
            key[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(take_slice(g, tuple(key)))
        return tuple(outs)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp, "concat")


def take_slice(a, key) -> Tensor:
    a = as_tensor(a)
    src = a.data.shape
    data = a.data[key]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data, dtype=np.float32)
    return _make(data, (a,), lambda g: (put_slice(g, key, src),), "slice")


def put_slice(g, key, shape) -> Tensor:
    """Adjoint of take_slice: embed g into zeros of `shape` at `key`."""
    g = as_tensor(g)
    data = np.zeros(shape, dtype=np.float32)
    data[key] = g.data
    return _make(data, (g,), lambda h: (take_slice(h, key),), "unslice")


def take_rows(a, idx) -> Tensor:
    """Row gather along axis 0 (embedding lookup); repeated rows accumulate in grad."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.data.shape[0]
    return _make(a.data[idx], (a,), lambda g: (scatter_rows(g, idx, n),), "take_rows")


def scatter_rows(g, idx, n: int) -> Tensor:
    g = as_tensor(g)
    idx = np.asarray(idx, dtype=np.int64)
    data = np.zeros((n,) + g.data.shape[1:], dtype=np.float32)
    np.add.at(data, idx, g.data)
    return _make(data, (g,), lambda h: (take_rows(h, idx),), "scatter_rows")


# -- matmul ----------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul expects tensors with ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    sa, sb = a.data.shape, b.data.shape

    def vjp(g):
        ga = _sum_to(matmul(g, swap_last2(b)), sa)
        gb = _sum_to(matmul(swap_last2(a), g), sb)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), vjp, "matmul")


# -- convolution (3x3) -------------------------------------------------------------


def _conv_out_hw(h, w, stride, pad):
    return (h + 2 * pad - 3) // stride + 1, (w + 2 * pad - 3) // stride + 1


def _im2col(x: np.ndarray, stride: int, pad: int):
    """(B,C,H,W) -> (B, OH*OW, C*9) patch matrix."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    oh, ow = _conv_out_hw(h, w, stride, pad)
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # b,c,oh,ow,3,3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * 9), oh, ow


def _conv2d_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    b, o = x.shape[0], w.shape[0]
    cols, oh, ow = _im2col(x, stride, pad)
    out = np.matmul(cols, w.reshape(o, -1).T)
    return out.transpose(0, 2, 1).reshape(b, o, oh, ow)


def _conv2d_dx_fwd(g: np.ndarray, w: np.ndarray, x_shape, stride: int, pad: int) -> np.ndarray:
    b, c, h, ww = x_shape
    o = g.shape[1]
    oh, ow = g.shape[2], g.shape[3]
    g2 = g.reshape(b, o, oh * ow).transpose(0, 2, 1)  # (B, ohow, O)
    dcols = np.matmul(g2, w.reshape(o, -1))  # (B, ohow, C*9)
    dcols = dcols.reshape(b, oh, ow, c, 3, 3)
    dxp = np.zeros((b, c, h + 2 * pad, ww + 2 * pad), dtype=np.float32)
    for u in range(3):
        for v in range(3):
            dxp[:, :, u : u + stride * oh : stride, v : v + stride * ow : stride] += (
                dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
            )
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp)


def _conv2d_dw_fwd(x: np.ndarray, g: np.ndarray, stride: int, pad: int) -> np.ndarray:
    o, c = g.shape[1], x.shape[1]
    cols, oh, ow = _im2col(x, stride, pad)
    g2 = g.reshape(g.shape[0], o, oh * ow)
    dw = np.tensordot(g2, cols, axes=([0, 2], [0, 1]))  # (O, C*9)
    return dw.reshape(o, c, 3, 3)


def conv2d(x, w, stride: int = 1, pad: int = 1) -> Tensor:
    """3x3 cross-correlation, NCHW; stride in {1,2}, pad in {0,1}."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or w.data.shape[2:] != (3, 3):
        raise ShapeMismatch(f"conv2d expects NCHW input and Ox C x3x3 kernel, got {x.shape}, {w.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeMismatch(f"conv2d channel mismatch: {x.shape} vs {w.shape}")
    x_shape = x.data.shape

    def vjp(g):
        return (conv2d_dx(g, w, x_shape, stride, pad), conv2d_dw(x, g, stride, pad))

    return _make(_conv2d_fwd(x.data, w.data, stride, pad), (x, w), vjp, "conv2d")


def conv2d_dx(g, w, x_shape, stride: int, pad: int) -> Tensor:
    g, w = as_tensor(g), as_tensor(w)

    def vjp(h):
        return (conv2d(h, w, stride, pad), conv2d_dw(h, g, stride, pad))

    return _make(_conv2d_dx_fwd(g.data, w.data, x_shape, stride, pad), (g, w), vjp, "conv2d_dx")


def conv2d_dw(x, g, stride: int, pad: int) -> Tensor:
    x, g = as_tensor(x), as_tensor(g)
    x_shape = x.data.shape

    def vjp(h):
        return (conv2d_dx(g, h, x_shape, stride, pad), conv2d(x, h, stride, pad))

    return _make(_conv2d_dw_fwd(x.data, g.data, stride, pad), (x, g), vjp, "conv2d_dw")


# -- resampling ---------------------------------------------------------------------


def upsample_nearest(x, factor: int) -> Tensor:
    """Replicate each pixel factor x factor over the last two axes."""
    x = as_tensor(x)
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return reshape(x, x.data.shape)
    data = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    return _make(data, (x,), lambda g: (block_sum(g, factor),), "upsample_nearest")


def block_sum(x, factor: int) -> Tensor:
    """Sum over factor x factor blocks of the last two axes (adjoint of upsample)."""
    x = as_tensor(x)
    factor = int(factor)
    if factor == 1:
        return reshape(x, x.data.shape)
    s = x.data.shape
    if s[-2] % factor or s[-1] % factor:
        raise ShapeMismatch(f"block_sum: {s} not divisible by {factor}")
    data = x.data.reshape(s[:-2] + (s[-2] // factor, factor, s[-1] // factor, factor))
    data = data.sum(axis=(-3, -1), dtype=np.float32)
    return _make(data, (x,), lambda g: (upsample_nearest(g, factor),), "block_sum")


def avg_pool2d(x, factor: int) -> Tensor:
    return mul(block_sum(x, factor), 1.0 / (factor * factor))


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = as_tensor(t)
        shape = list(t.data.shape)
        shape.insert(axis % (t.data.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)
