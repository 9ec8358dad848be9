"""Execution stage: translate a composited layout plus style latents into an image.

The latent-to-pixel assignment is induced by the layout (average-pooled to
each feature resolution) instead of computed by attention; an optional
sigmoidal gate, fed by layout, image features and style latents, locally
rescales that assignment before the per-pixel mixture modulates the
features.  Output is tanh-bounded RGB.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .compositor import Layout
from .config import ModelConfig
from .errors import CountMismatch, Unsupported
from .nn import LEAK, Affine, MappingNet, Module, Conv3x3, NoiseInjection, flat_to_nchw, nchw_to_flat
from .rng import Rng
from .tensor import Tensor

GATE_MODES = ("full", "latents", "layout", "image", "off")


@dataclass
class StyleLatents:
    W: Tensor  # (k, d_w)
    provenance: list  # per-row (z, mean_depth, M) inputs
    slots: np.ndarray


class Modulator(Module):
    """Per-pixel gain/bias modulation from an attended style mixture."""

    def __init__(self, rng: Rng, channels: int, d_w: int, att_dim: int):
        super().__init__()
        self.v_map = self.add_child("v", Affine(rng.child("v"), d_w, att_dim))
        self.gamma_map = self.add_child("gamma", Affine(rng.child("gamma"), att_dim, channels))
        self.beta_map = self.add_child("beta", Affine(rng.child("beta"), att_dim, channels))

    def __call__(self, x_flat: Tensor, weights: Tensor, w: Tensor) -> Tensor:
        attended = T.matmul(weights, self.v_map(w))
        gamma = T.add(self.gamma_map(attended), 1.0)
        beta = self.beta_map(attended)
        return T.add(T.mul(gamma, T.layernorm(x_flat, axis=-1)), beta)


class GateNet(Module):
    """Per-(pixel, segment) sigmoidal gate over selected input groups.

    Equivalent to a 2-layer MLP on the concatenation of the enabled inputs
    (the first affine of a concat is the sum of per-group affines); a
    per-slot bias keeps the output segment-dependent in every mode.
    """

    def __init__(self, rng: Rng, channels: int, d_w: int, num_classes: int,
                 hidden: int, k_max: int):
        super().__init__()
        self.x_proj = self.add_child("x", Affine(rng.child("x"), channels, hidden, bias=False))
        self.w_proj = self.add_child("w", Affine(rng.child("w"), d_w, hidden, bias=False))
        self.s_proj = self.add_child("s", Affine(rng.child("s"), num_classes, hidden, bias=False))
        self.a_vec = self.register("a_vec", rng.child("a").normal((hidden,)))
        self.slot_bias = self.register("slot_bias", np.zeros((k_max, hidden), dtype=np.float32))
        self.bias = self.register("bias", np.zeros(hidden, dtype=np.float32))
        self.out = self.add_child("out", Affine(rng.child("out"), hidden, 1))

    def __call__(self, mode: str, a_flat: Tensor, s_flat: Tensor, x_flat: Tensor,
                 w: Tensor, slots: np.ndarray) -> Tensor:
        b, n, k = a_flat.shape
        pre = T.reshape(self.bias, (1, 1, 1, -1))
        pre = T.add(pre, T.reshape(T.take_rows(self.slot_bias, slots), (1, 1, k, -1)))
        if mode in ("full", "image"):
            pre = T.add(pre, T.reshape(self.x_proj(x_flat), (b, n, 1, -1)))
        if mode in ("full", "latents"):
            pre = T.add(pre, T.reshape(self.w_proj(w), (b, 1, k, -1)))
        if mode in ("full", "layout"):
            pre = T.add(pre, T.reshape(self.s_proj(s_flat), (b, n, 1, -1)))
            pre = T.add(pre, T.mul(T.reshape(a_flat, (b, n, k, 1)),
                                   T.reshape(self.a_vec, (1, 1, 1, -1))))
        logits = self.out(T.leaky_relu(pre, LEAK))
        logits = T.reshape(logits, logits.shape[:-1])
        return T.broadcast_to(logits, (b, n, k))


def modulation_weights(a_flat: Tensor, gate_logits: Tensor | None) -> Tensor:
    """(B,n,k) assignment; if gated, renormalized A ⊙ sigmoid(gate)."""
    if gate_logits is None:
        return a_flat
    gated = T.mul(a_flat, T.sigmoid(gate_logits))
    total = T.add(T.tsum(gated, axis=-1, keepdims=True), 1e-8)
    return T.div(gated, total)


class ExecutorNet(Module):
    def __init__(self, rng: Rng, cfg: ModelConfig):
        super().__init__()
        if cfg.upsample_mode != "nearest":
            raise Unsupported(f"upsample_mode={cfg.upsample_mode!r} (only 'nearest')")
        if cfg.gate_mode not in GATE_MODES:
            raise Unsupported(f"gate_mode={cfg.gate_mode!r}")
        self.cfg = cfg
        self.levels = [4]
        while self.levels[-1] < cfg.resolution:
            self.levels.append(self.levels[-1] * 2)
        chans = cfg.executor_channels
        if len(chans) != len(self.levels):
            raise ValueError(f"executor_channels must list {len(self.levels)} entries")
        self.mapping = self.add_child(
            "mapping", MappingNet(rng.child("map"), cfg.d_z + 1 + cfg.num_classes, cfg.d_w,
                                  depth=cfg.mapping_layers, lr_mul=cfg.mapping_lr_mul))
        self.const = self.register("const", rng.child("const").normal((1, chans[0], 4, 4)))
        self.convs, self.mods, self.noises, self.gates = [], [], [], []
        prev_c = chans[0]
        for i, (res, ch) in enumerate(zip(self.levels, chans)):
            conv = self.add_child(f"conv{i}", Conv3x3(rng.child(f"conv{i}"), prev_c, ch,
                                                      gain=math.sqrt(2.0)))
            mod = self.add_child(f"mod{i}", Modulator(rng.child(f"mod{i}"), ch,
                                                      cfg.d_w, cfg.att_dim))
            noise = self.add_child(f"noise{i}", NoiseInjection(ch))
            gate = self.add_child(f"gate{i}", GateNet(rng.child(f"gate{i}"), ch, cfg.d_w,
                                                      cfg.num_classes, cfg.gate_hidden,
                                                      cfg.k_max))
            self.convs.append(conv)
            self.mods.append(mod)
            self.noises.append(noise)
            self.gates.append(gate)
            prev_c = ch
        self.to_rgb = self.add_child("to_rgb", Affine(rng.child("rgb"), chans[-1], 3))

    def map_style_latents_batched(self, Z: Tensor, mean_d: Tensor, M: Tensor) -> Tensor:
        """W rows from [z | mean depth | class distribution]; (B,k,d_w)."""
        inp = T.concat([Z, T.reshape(mean_d, mean_d.shape + (1,)), M], axis=-1)
        return self.mapping(inp)

    def execute_maps(self, A: Tensor, class_map: Tensor, W: Tensor,
                     slots: np.ndarray, rng: Rng | None, gate_mode: str | None = None) -> Tensor:
        """A: (B,k,H,W); class_map: (B,C,H,W); W: (B,k,d_w). Returns (B,3,H,W)."""
        cfg = self.cfg
        mode = cfg.gate_mode if gate_mode is None else gate_mode
        if mode not in GATE_MODES:
            raise Unsupported(f"gate_mode={mode!r}")
        b = A.shape[0]
        x = T.broadcast_to(self.const, (b,) + self.const.shape[1:])
        full_res = cfg.resolution
        for i, res in enumerate(self.levels):
            if i > 0:
                x = T.upsample_nearest(x, 2)
            x = self.convs[i](x)
            if cfg.noise_inject and rng is not None:
                x = self.noises[i](x, rng.child(f"noise{i}"))
            x = T.leaky_relu(x, LEAK)
            a_flat = nchw_to_flat(T.avg_pool2d(A, full_res // res))
            s_flat = nchw_to_flat(T.avg_pool2d(class_map, full_res // res))
            x_flat = nchw_to_flat(x)
            if mode == "off":
                gate_logits = None
            else:
                gate_logits = self.gates[i](mode, a_flat, s_flat, x_flat, W, slots)
            weights = modulation_weights(a_flat, gate_logits)
            x_flat = self.mods[i](x_flat, weights, W)
            x = flat_to_nchw(x_flat, res, res)
        rgb = T.tanh(self.to_rgb(nchw_to_flat(x)))
        return flat_to_nchw(rgb, full_res, full_res)


class Executor:
    """Single-scene convenience wrapper used by the CLI and service."""

    def __init__(self, net: ExecutorNet):
        self.net = net

    @property
    def cfg(self) -> ModelConfig:
        return self.net.cfg

    def map_style_latents(self, layout: Layout, Z: np.ndarray, rng: Rng | None = None) -> StyleLatents:
        k = len(layout.segments)
        Z = np.asarray(Z, dtype=np.float32)
        if Z.shape[0] != k:
            raise CountMismatch(f"{Z.shape[0]} style latents for {k} segments")
        mean_d = np.array([s.mean_depth() for s in layout.segments], dtype=np.float32)
        M = T.stack([s.M for s in layout.segments], axis=0)
        W = self.net.map_style_latents_batched(
            T.reshape(Tensor(Z), (1, k, -1)),
            T.reshape(Tensor(mean_d), (1, k)),
            T.reshape(M, (1, k, -1)),
        )
        prov = [(Z[i].copy(), float(mean_d[i]), layout.segments[i].M.data.copy())
                for i in range(k)]
        slots = np.array([s.slot for s in layout.segments], dtype=np.int64)
        return StyleLatents(W=T.reshape(W, (k, -1)), provenance=prov, slots=slots)

    def execute(self, layout: Layout, styles: StyleLatents, rng: Rng,
                gate_mode: str | None = None) -> Tensor:
        """Render (H,W,3) in [-1,1]; deterministic given layout, styles, seed."""
        k = len(layout.segments)
        if styles.W.shape[0] != k:
            raise CountMismatch(f"{styles.W.shape[0]} styles for {k} segments")
        img = self.net.execute_maps(
            T.reshape(layout.A, (1,) + layout.A.shape),
            T.reshape(layout.class_map, (1,) + layout.class_map.shape),
            T.reshape(styles.W, (1,) + styles.W.shape),
            styles.slots, rng, gate_mode=gate_mode,
        )
        return T.transpose(T.reshape(img, img.shape[1:]), (1, 2, 0))
