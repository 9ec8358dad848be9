"""Bipartite attention between image features and a variable latent set.

A block computes key-value attention from pixels to latents
(softmax(q(X) k(W)^T / sqrt(d)) v(W)) and then modulates the normalized
features with per-pixel gain and bias derived from the attended mixture.
The same parameters serve any latent count in [1, k_max]; latent identity
enters through a trained slot embedding carried alongside the latents, and
pixel positions through a sinusoidal 2-axis encoding added to the query
inputs only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .nn import Affine, Module, pe_table
from .rng import Rng
from .tensor import Tensor


@dataclass
class AttendResult:
    weights: Tensor   # (B, n, k) row-stochastic over latents
    attended: Tensor  # (B, n, d)
    scores: Tensor    # (B, n, k) pre-softmax, exposed for introspection


class AttentionBlock(Module):
    def __init__(self, rng: Rng, x_dim: int, latent_dim: int, att_dim: int,
                 k_max: int, ctx_dim: int = 0, heads: int = 1):
        super().__init__()
        if heads < 1 or att_dim % heads:
            raise ShapeMismatch(f"att_dim {att_dim} not divisible by heads {heads}")
        self.x_dim, self.ctx_dim, self.att_dim, self.heads = x_dim, ctx_dim, att_dim, heads
        q_in = x_dim + ctx_dim
        self.q_map = self.add_child("q", Affine(rng.child("q"), q_in, att_dim))
        self.k_map = self.add_child("k", Affine(rng.child("k"), latent_dim, att_dim))
        self.v_map = self.add_child("v", Affine(rng.child("v"), latent_dim, att_dim))
        self.gamma_map = self.add_child("gamma", Affine(rng.child("gamma"), att_dim, x_dim))
        self.beta_map = self.add_child("beta", Affine(rng.child("beta"), att_dim, x_dim))
        self.slot_emb = self.register("slot_emb", rng.child("slots").normal((k_max, latent_dim)))

    def _query_input(self, x_flat: Tensor, ctx_flat, hw) -> Tensor:
        q_in = x_flat if ctx_flat is None else T.concat([x_flat, ctx_flat], axis=-1)
        pe = pe_table(hw[0], hw[1], q_in.shape[-1])
        return T.add(q_in, Tensor(pe))

    def _latent_input(self, w: Tensor, slots) -> Tensor:
        if slots is None:
            slots = np.arange(w.shape[-2])
        emb = T.take_rows(self.slot_emb, np.asarray(slots, dtype=np.int64))
        return T.add(w, emb)

    def attend(self, x_flat: Tensor, w: Tensor, hw, ctx_flat=None, slots=None) -> AttendResult:
        """x_flat: (B,n,c[+ctx via ctx_flat]); w: (B,k,latent_dim)."""
        if w.shape[-2] < 1 or x_flat.shape[-2] < 1:
            raise ShapeMismatch("attend needs at least one latent and one pixel")
        b, n, _ = x_flat.shape
        k = w.shape[-2]
        q = self.q_map(self._query_input(x_flat, ctx_flat, hw))
        wp = self._latent_input(w, slots)
        keys = self.k_map(wp)
        vals = self.v_map(wp)
        h, dh = self.heads, self.att_dim // self.heads
        if h == 1:
            scores = T.mul(T.matmul(q, T.swap_last2(keys)), 1.0 / math.sqrt(self.att_dim))
            weights = T.softmax(scores, axis=-1)
            attended = T.matmul(weights, vals)
        else:
            qh = T.transpose(T.reshape(q, (b, n, h, dh)), (0, 2, 1, 3))
            kh = T.transpose(T.reshape(keys, (b, k, h, dh)), (0, 2, 1, 3))
            vh = T.transpose(T.reshape(vals, (b, k, h, dh)), (0, 2, 1, 3))
            s = T.mul(T.matmul(qh, T.swap_last2(kh)), 1.0 / math.sqrt(dh))
            wgt = T.softmax(s, axis=-1)
            att = T.matmul(wgt, vh)  # (b,h,n,dh)
            attended = T.reshape(T.transpose(att, (0, 2, 1, 3)), (b, n, h * dh))
            weights = T.tmean(wgt, axis=1)
            scores = T.tmean(s, axis=1)
        return AttendResult(weights=weights, attended=attended, scores=scores)

    def modulate(self, x_flat: Tensor, attended: Tensor) -> Tensor:
        gamma = T.add(self.gamma_map(attended), 1.0)
        beta = self.beta_map(attended)
        return T.add(T.mul(gamma, T.layernorm(x_flat, axis=-1)), beta)

    def __call__(self, x_flat: Tensor, w: Tensor, hw, ctx_flat=None, slots=None):
        res = self.attend(x_flat, w, hw, ctx_flat=ctx_flat, slots=slots)
        out = self.modulate(x_flat, res.attended)
        return out, res
