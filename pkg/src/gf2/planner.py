"""Planning stage: recurrent, variable-count generation of scene segments.

Each step draws k_t latents, maps them through the shared structure mapping
network, and synthesizes per-segment shape/class/depth heads from a small
attention-modulated stack, conditioning every attention query on a
rendering of the layout built so far.  Segment shape logits are read off
the final block's attention columns, so a segment's spatial extent IS its
latent's attended region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionBlock
from .compositor import Layout, SegmentDraft, composite, composite_maps
from .config import ModelConfig
from .errors import EmptyScene, Unsupported
from .nn import LEAK, Affine, Conv3x3, MappingNet, Module, NoiseInjection, flat_to_nchw, nchw_to_flat
from .rng import Rng
from .tensor import Tensor


@dataclass
class CountDistribution:
    """Gaussian over per-step segment counts, clamped to [k_min, k_max]."""

    mu: float
    sigma: float
    k_min: int = 1
    k_max: int = 6

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.k_min > self.k_max:
            raise ValueError("k_min > k_max")

    def sample(self, rng: Rng) -> int:
        raw = float(rng.normal((), mean=self.mu, std=self.sigma))
        return int(np.clip(round(raw), self.k_min, self.k_max))

    @classmethod
    def fit(cls, segment_counts, steps: int, k_min: int = 1, k_max: int = 6):
        """Max-likelihood normal fit to per-step counts (#segments / steps)."""
        per_step = np.asarray(segment_counts, dtype=np.float64) / max(steps, 1)
        return cls(mu=float(per_step.mean()), sigma=float(per_step.std()),
                   k_min=k_min, k_max=k_max)


def _levels(resolution: int) -> list[int]:
    levels = [4]
    while levels[-1] < resolution:
        levels.append(levels[-1] * 2)
    return levels


class PlannerNet(Module):
    """Synthesis network for one planning step (parameters fixed across steps)."""

    def __init__(self, rng: Rng, cfg: ModelConfig):
        super().__init__()
        if cfg.upsample_mode != "nearest":
            raise Unsupported(f"upsample_mode={cfg.upsample_mode!r} (only 'nearest')")
        self.cfg = cfg
        self.levels = _levels(cfg.resolution)
        chans = cfg.planner_channels
        if len(chans) != len(self.levels):
            raise ValueError(f"planner_channels must list {len(self.levels)} entries")
        self.mapping = self.add_child(
            "mapping", MappingNet(rng.child("map"), cfg.d_z, cfg.d_u,
                                  depth=cfg.mapping_layers, lr_mul=cfg.mapping_lr_mul))
        self.const = self.register("const", rng.child("const").normal((1, chans[0], 4, 4)))
        self.convs, self.blocks, self.noises = [], [], []
        prev_c = chans[0]
        for i, (res, ch) in enumerate(zip(self.levels, chans)):
            conv = Conv3x3(rng.child(f"conv{i}"), prev_c, ch, gain=math.sqrt(2.0))
            block = AttentionBlock(rng.child(f"att{i}"), x_dim=ch, latent_dim=cfg.d_u,
                                   att_dim=cfg.att_dim, k_max=cfg.k_max,
                                   ctx_dim=cfg.num_classes, heads=cfg.heads)
            self.add_child(f"conv{i}", conv)
            self.add_child(f"att{i}", block)
            self.convs.append(conv)
            self.blocks.append(block)
            noise = NoiseInjection(ch)
            self.add_child(f"noise{i}", noise)
            self.noises.append(noise)
            prev_c = ch
        c_last = chans[-1]
        dd = cfg.depth_head_dim
        self.depth_feat = self.add_child("depth_feat", Affine(rng.child("df"), c_last, dd))
        self.depth_u = self.add_child("depth_u", Affine(rng.child("du"), cfg.d_u, dd))
        self.class_head = self.add_child(
            "class_head", Affine(rng.child("mh"), cfg.d_u + c_last, cfg.num_classes))
        self.dense_head = self.add_child(
            "dense_head", Affine(rng.child("dh"), c_last, cfg.num_classes))

    def map_structure_latents(self, Z: Tensor) -> Tensor:
        """Row-wise shared mapping z -> u; deterministic."""
        return self.mapping(Z)

    def synthesize(self, U: Tensor, prev_class, slots, rng: Rng | None = None):
        """U: (B,k,d_u); prev_class: (B,C,H,W) at full resolution or None.

        Returns (features (B,n,c), final AttendResult).
        """
        b = U.shape[0]
        x = T.broadcast_to(self.const, (b,) + self.const.shape[1:])
        att = None
        for i, res in enumerate(self.levels):
            if i > 0:
                x = T.upsample_nearest(x, 2)
            x = self.convs[i](x)
            if self.cfg.planner_noise_inject and rng is not None:
                x = self.noises[i](x, rng.child(f"noise{i}"))
            x = T.leaky_relu(x, LEAK)
            if prev_class is None:
                ctx = Tensor(np.zeros((b, res * res, self.cfg.num_classes), dtype=np.float32))
            else:
                pooled = T.avg_pool2d(prev_class, prev_class.shape[-1] // res)
                ctx = nchw_to_flat(pooled)
            flat, att = self.blocks[i](nchw_to_flat(x), U, (res, res),
                                       ctx_flat=ctx, slots=slots)
            x = flat_to_nchw(flat, res, res)
        return nchw_to_flat(x), att

    def step_maps(self, U: Tensor, prev_class, slots, rng: Rng | None = None) -> dict:
        """Batched segment heads: P,d (B,k,H,W); M (B,k,C)."""
        b, k, _ = U.shape
        res = self.cfg.resolution
        feats, att = self.synthesize(U, prev_class, slots, rng=rng)
        p_logits = T.swap_last2(att.scores)  # (B,k,n)
        P = T.reshape(T.softmax(p_logits, axis=-1), (b, k, res, res))
        df = self.depth_feat(feats)  # (B,n,dd)
        du = self.depth_u(U)         # (B,k,dd)
        d = T.mul(T.matmul(df, T.swap_last2(du)), 1.0 / math.sqrt(self.cfg.depth_head_dim))
        d = T.reshape(T.swap_last2(d), (b, k, res, res))
        col = T.add(T.tsum(att.weights, axis=1, keepdims=True), 1e-6)  # (B,1,k)
        pooled = T.div(T.matmul(T.swap_last2(att.weights), feats), T.swap_last2(col))
        M = T.softmax(self.class_head(T.concat([U, pooled], axis=-1)), axis=-1)
        return {"P": P, "M": M, "d": d, "attention": att}

    def dense_maps(self, U: Tensor, rng: Rng | None = None) -> Tensor:
        """Single-pass class map (B,C,H,W) for the non-compositional mode."""
        res = self.cfg.resolution
        feats, _ = self.synthesize(U, None, slots=np.zeros(U.shape[1], dtype=np.int64), rng=rng)
        logits = self.dense_head(feats)
        return flat_to_nchw(T.softmax(logits, axis=-1), res, res)


class Planner:
    """Recurrent scene planning on top of a PlannerNet."""

    def __init__(self, net: PlannerNet, count_dist: CountDistribution):
        self.net = net
        self.count = count_dist

    @property
    def cfg(self) -> ModelConfig:
        return self.net.cfg

    def sample_segment_count(self, rng: Rng) -> int:
        return self.count.sample(rng)

    def plan_step(self, U: Tensor, prev: Layout | None, rng: Rng,
                  birth_step: int = 1, slot_offset: int = 0) -> list[SegmentDraft]:
        """Emit one step's SegmentDrafts for a single scene; prev may be None."""
        k = U.shape[0]
        slots = np.arange(slot_offset, slot_offset + k) % self.cfg.k_max
        prev_class = None
        if prev is not None:
            prev_class = T.reshape(prev.class_map, (1,) + prev.class_map.shape)
        maps = self.net.step_maps(T.reshape(U, (1, k, -1)), prev_class, slots, rng=rng)
        drafts = []
        for i in range(k):
            drafts.append(SegmentDraft(
                P=maps["P"][0, i], M=maps["M"][0, i], d=maps["d"][0, i],
                u=U.data[i].copy(), birth_step=birth_step, slot=int(slots[i]),
            ))
        return drafts

    def plan_scene(self, rng: Rng, force_counts: list[int] | None = None) -> Layout:
        cfg = self.cfg
        if cfg.steps == 0:
            z = Tensor(rng.child("z0").normal((1, 1, cfg.d_z)))
            U = self.net.map_structure_latents(z)
            dense = self.net.dense_maps(U, rng=rng.child("synth0"))
            res = cfg.resolution
            pseudo = SegmentDraft(
                P=Tensor(np.full((res, res), 1.0 / (res * res), dtype=np.float32)),
                M=T.tmean(T.reshape(dense, (cfg.num_classes, res * res)), axis=1),
                d=Tensor(np.zeros((res, res), dtype=np.float32)),
                z=z.data[0, 0].copy(), u=U.data[0, 0].copy(), birth_step=0, slot=0,
            )
            return composite([pseudo], cfg.k_max,
                             dense_class=T.reshape(dense, dense.shape[1:]))
        segments: list[SegmentDraft] = []
        layout: Layout | None = None
        steps = len(force_counts) if force_counts is not None else cfg.steps
        for t in range(1, steps + 1):
            if force_counts is not None:
                k_t = force_counts[t - 1]
            else:
                k_t = self.sample_segment_count(rng.child(f"count{t}"))
            k_t = min(k_t, cfg.k_max - len(segments))
            if k_t <= 0:
                continue
            z = rng.child(f"z{t}").normal((k_t, cfg.d_z))
            U = self.net.map_structure_latents(Tensor(z))
            drafts = self.plan_step(U, layout, rng.child(f"synth{t}"),
                                    birth_step=t, slot_offset=len(segments))
            for i, draft in enumerate(drafts):
                draft.z = z[i].copy()
            segments.extend(drafts)
            layout = composite(segments, cfg.k_max)
        if layout is None:
            raise EmptyScene("planning produced zero segments")
        return layout

    def plan_scene_batched(self, batch: int, rng: Rng) -> dict:
        """Training path: one k_t sequence shared across the batch."""
        cfg = self.cfg
        if cfg.steps == 0:
            z = Tensor(rng.child("z0").normal((batch, 1, cfg.d_z)))
            U = self.net.map_structure_latents(z)
            dense = self.net.dense_maps(U, rng=rng.child("synth0"))
            res = cfg.resolution
            P = Tensor(np.full((batch, 1, res, res), 1.0 / (res * res), dtype=np.float32))
            d = Tensor(np.zeros((batch, 1, res, res), dtype=np.float32))
            M = T.reshape(T.tmean(T.reshape(dense, (batch, cfg.num_classes, res * res)), axis=2),
                          (batch, 1, cfg.num_classes))
            maps = composite_maps(P, d, M, cfg.k_max, dense_class=dense)
            maps.update({"P": P, "d": d, "M": M, "Z": z})
            return maps
        P_parts, d_parts, M_parts, Z_parts = [], [], [], []
        maps = None
        offset = 0
        for t in range(1, cfg.steps + 1):
            k_t = self.sample_segment_count(rng.child(f"count{t}"))
            k_t = min(k_t, cfg.k_max - offset)
            if k_t <= 0:
                continue
            slots = np.arange(offset, offset + k_t)
            z = Tensor(rng.child(f"z{t}").normal((batch, k_t, cfg.d_z)))
            U = self.net.map_structure_latents(z)
            prev_class = None if maps is None else maps["class_map"]
            step = self.net.step_maps(U, prev_class, slots, rng=rng.child(f"synth{t}"))
            P_parts.append(step["P"])
            d_parts.append(step["d"])
            M_parts.append(step["M"])
            Z_parts.append(z)
            offset += k_t
            maps = composite_maps(T.concat(P_parts, axis=1), T.concat(d_parts, axis=1),
                                  T.concat(M_parts, axis=1), cfg.k_max)
        if maps is None:
            raise EmptyScene("planning produced zero segments")
        maps.update({"P": T.concat(P_parts, axis=1), "d": T.concat(d_parts, axis=1),
                     "M": T.concat(M_parts, axis=1), "Z": T.concat(Z_parts, axis=1)})
        return maps

    def regenerate_segment(self, layout: Layout, i: int, z_new: np.ndarray,
                           rng: Rng) -> Layout:
        """Recompute segment i conditioned on all the others; others untouched."""
        if not 0 <= i < len(layout.segments):
            raise IndexError(f"segment index {i} out of range")
        others = [s for j, s in enumerate(layout.segments) if j != i]
        prev = composite(others, layout.k_max) if others else None
        old = layout.segments[i]
        z = np.asarray(z_new, dtype=np.float32).reshape(1, -1)
        U = self.net.map_structure_latents(Tensor(z))
        draft = self.plan_step(U, prev, rng, birth_step=old.birth_step,
                               slot_offset=old.slot)[0]
        draft.z = z[0].copy()
        segments = list(layout.segments)
        segments[i] = draft
        return composite(segments, layout.k_max)

    def add_segments(self, layout: Layout, rng: Rng) -> Layout:
        """One extra planning step conditioned on the current layout."""
        k_t = self.sample_segment_count(rng.child("count"))
        k_t = min(k_t, self.cfg.k_max - len(layout.segments))
        if k_t <= 0:
            return layout
        t = max(s.birth_step for s in layout.segments) + 1
        z = rng.child("z").normal((k_t, self.cfg.d_z))
        U = self.net.map_structure_latents(Tensor(z))
        drafts = self.plan_step(U, layout, rng.child("synth"), birth_step=t,
                                slot_offset=len(layout.segments))
        for i, draft in enumerate(drafts):
            draft.z = z[i].copy()
        return composite(list(layout.segments) + drafts, layout.k_max)
