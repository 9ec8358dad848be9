"""The two critics: a layout critic for planning, and an image critic whose
shared downsampling stem feeds three heads — a scene realism logit, a U-Net
per-pixel class decoder, and per-segment scores pooled over the layout's
soft regions (the jigsaw partition).
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ShapeMismatch
from .nn import LEAK, Affine, Conv3x3, Module, minibatch_stddev, nchw_to_flat, flat_to_nchw
from .rng import Rng
from .tensor import Tensor


class LayoutDiscriminator(Module):
    """Conv-downsample stack from the (C + k_max)-channel layout tensor to a logit."""

    def __init__(self, rng: Rng, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.in_channels = cfg.num_classes + cfg.k_max
        chans = cfg.disc_channels
        self.convs = []
        prev = self.in_channels
        for i, ch in enumerate(chans):
            conv = self.add_child(f"conv{i}", Conv3x3(rng.child(f"conv{i}"), prev, ch,
                                                      gain=math.sqrt(2.0)))
            self.convs.append(conv)
            prev = ch
        self.post = self.add_child("post", Conv3x3(rng.child("post"), prev + 1, prev,
                                                   gain=math.sqrt(2.0)))
        final_res = cfg.resolution // (2 ** len(chans))
        self.fc = self.add_child("fc", Affine(rng.child("fc"), prev * final_res * final_res, 1))

    def __call__(self, layout_tensor: Tensor) -> Tensor:
        """(B, C+k_max, H, W) -> (B,) logits."""
        if layout_tensor.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"layout tensor has {layout_tensor.shape[1]} channels, want {self.in_channels}")
        x = layout_tensor
        for conv in self.convs:
            x = T.leaky_relu(conv(x, stride=2), LEAK)
        x = T.leaky_relu(self.post(minibatch_stddev(x)), LEAK)
        b = x.shape[0]
        return T.reshape(self.fc(T.reshape(x, (b, 1, -1))), (b,))


def segment_pool(stem_features: Tensor, a_down: Tensor, mass_floor: float = 1e-6):
    """Mask-weighted average pooling: (B,F,h,w) x (B,K,h,w) -> (B,K,F).

    Zero-mass segments come back as zero rows with skipped=True.
    """
    b, f, h, w = stem_features.shape
    k = a_down.shape[1]
    masks = T.reshape(a_down, (b, k, h * w))
    feats = T.swap_last2(T.reshape(stem_features, (b, f, h * w)))  # (B,hw,F)
    sums = T.matmul(masks, feats)  # (B,K,F)
    mass = T.tsum(masks, axis=-1, keepdims=True)  # (B,K,1)
    skipped = mass.data[..., 0] <= mass_floor
    alive = Tensor((~skipped).astype(np.float32).reshape(b, k, 1))
    pooled = T.mul(T.div(sums, T.maximum(mass, mass_floor)), alive)
    return pooled, skipped


class ImageDiscriminator(Module):
    """Shared stem over (S || X); scene logit, U-Net class decoder, segment scorer."""

    def __init__(self, rng: Rng, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.in_channels = cfg.num_classes + cfg.k_max + 3
        chans = cfg.disc_channels  # one entry per stride-2 stem block
        self.enc = []
        prev = self.in_channels
        for i, ch in enumerate(chans):
            conv = self.add_child(f"enc{i}", Conv3x3(rng.child(f"enc{i}"), prev, ch,
                                                     gain=math.sqrt(2.0)))
            self.enc.append(conv)
            prev = ch
        self.stem_channels = prev
        # scene head
        self.post = self.add_child("post", Conv3x3(rng.child("post"), prev + 1, prev,
                                                   gain=math.sqrt(2.0)))
        final_res = cfg.resolution // (2 ** len(chans))
        self.fc = self.add_child("fc", Affine(rng.child("fc"), prev * final_res * final_res, 1))
        # U-Net decoder with skip connections from every encoder scale
        self.dec = []
        up_prev = prev
        for i in reversed(range(len(chans))):
            skip_ch = chans[i - 1] if i > 0 else 0
            conv = self.add_child(f"dec{i}", Conv3x3(rng.child(f"dec{i}"),
                                                     up_prev + skip_ch,
                                                     max(chans[i] // 2, 8),
                                                     gain=math.sqrt(2.0)))
            self.dec.append(conv)
            up_prev = max(chans[i] // 2, 8)
        self.seg_out = self.add_child("seg_out", Affine(rng.child("seg_out"), up_prev,
                                                        cfg.num_classes))
        # segment head: shared scorer over pooled stem features
        hidden = 32
        self.seg_fc1 = self.add_child("seg_fc1", Affine(rng.child("sf1"), prev, hidden,
                                                        gain=math.sqrt(2.0)))
        self.seg_fc2 = self.add_child("seg_fc2", Affine(rng.child("sf2"), hidden, 1))

    def forward_combined(self, combined: Tensor, a_down: Tensor | None = None,
                         heads: tuple = ("scene", "segmentation", "segments")) -> dict:
        """combined: (B, C+k_max+3, H, W) = layout tensor channels then RGB."""
        if combined.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"critic input has {combined.shape[1]} channels, want {self.in_channels}")
        skips = []
        x = combined
        for conv in self.enc:
            x = T.leaky_relu(conv(x, stride=2), LEAK)
            skips.append(x)
        stem = x  # (B, F, R/8, R/8)
        out: dict = {"stem": stem}
        if "scene" in heads:
            h = T.leaky_relu(self.post(minibatch_stddev(stem)), LEAK)
            b = h.shape[0]
            out["scene_logit"] = T.reshape(self.fc(T.reshape(h, (b, 1, -1))), (b,))
        if "segmentation" in heads:
            h = stem
            for j, conv in enumerate(self.dec):
                h = T.upsample_nearest(h, 2)
                skip_idx = len(self.enc) - 2 - j
                if skip_idx >= 0:
                    h = T.concat([h, skips[skip_idx]], axis=1)
                h = T.leaky_relu(conv(h), LEAK)
            res = h.shape[-1]
            out["seg_logits"] = flat_to_nchw(self.seg_out(nchw_to_flat(h)), res, res)
        if "segments" in heads and a_down is not None:
            pool_masks = T.avg_pool2d(a_down, a_down.shape[-1] // stem.shape[-1]) \
                if a_down.shape[-1] != stem.shape[-1] else a_down
            pooled, skipped = segment_pool(stem, pool_masks)
            h = T.leaky_relu(self.seg_fc1(pooled), LEAK)
            out["segment_logits"] = T.reshape(self.seg_fc2(h), pooled.shape[:2])
            out["skipped"] = skipped
        return out

    def __call__(self, s_tensor: Tensor, x: Tensor, a_masks: Tensor | None = None,
                 heads: tuple = ("scene", "segmentation", "segments")) -> dict:
        """s_tensor: (B, C+k_max, H, W); x: (B,3,H,W) in [-1,1]."""
        if s_tensor.shape[0] != x.shape[0] or s_tensor.shape[-2:] != x.shape[-2:]:
            raise ShapeMismatch(f"layout {s_tensor.shape} vs image {x.shape}")
        return self.forward_combined(T.concat([s_tensor, x], axis=1), a_masks, heads)
