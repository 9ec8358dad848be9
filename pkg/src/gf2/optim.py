"""Adam with bias correction and the exponential moving average used for sampling."""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ShapeMismatch
from .tensor import Tensor


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float, beta2: float, eps: float):
    """One bias-corrected Adam update; mutates param/m/v in place."""
    if param.shape != grad.shape:
        raise ShapeMismatch(f"param {param.shape} vs grad {grad.shape}")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p.data, g, self.m[k], self.v[k], self.t,
                      self.lr, self.betas[0], self.betas[1], self.eps)

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state_tensors(self, prefix: str, entries: dict[str, np.ndarray], t: int):
        self.t = t
        for k in self.params:
            self.m[k] = entries[f"{prefix}.m.{k}"].copy()
            self.v[k] = entries[f"{prefix}.v.{k}"].copy()


class Ema:
    """Shadow copies of parameters; generation swaps shadows in."""

    def __init__(self, params: dict[str, Tensor], decay: float = 0.999):
        self.decay = decay
        self.shadow = {k: p.data.copy() for k, p in params.items()}

    def update(self, params: dict[str, Tensor], decay: float | None = None):
        d = self.decay if decay is None else decay
        for k, p in params.items():
            self.shadow[k] *= d
            self.shadow[k] += (1.0 - d) * p.data

    @contextmanager
    def applied(self, params: dict[str, Tensor]):
        saved = {k: p.data for k, p in params.items()}
        for k, p in params.items():
            p.data = self.shadow[k].copy()
        try:
            yield
        finally:
            for k, p in params.items():
                p.data = saved[k]
