"""Training objectives: non-saturating adversarial losses, R1 gradient
penalty, semantic matching (layout vs. critic-predicted segmentation),
per-segment fidelity, and the edge-matching baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import AllSegmentsSkipped, ShapeMismatch
from .tensor import Tensor, grad


@dataclass
class LossReport:
    """Named scalar map plus the weights in effect; total = sum of weighted terms."""

    terms: dict[str, float] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, value, weight: float = 1.0):
        v = float(value.data if isinstance(value, Tensor) else value)
        if not np.isfinite(v):
            raise ValueError(f"loss term {name} is not finite: {v}")
        self.terms[name] = v
        self.weights[name] = weight

    @property
    def total(self) -> float:
        return sum(self.weights[k] * v for k, v in self.terms.items())


def g_loss_nonsat(fake_logits: Tensor) -> Tensor:
    """mean softplus(-logit): the generator wants the critic fooled."""
    return T.tmean(T.softplus(T.mul(fake_logits, -1.0)))


def d_loss_nonsat(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    return T.add(T.tmean(T.softplus(T.mul(real_logits, -1.0))),
                 T.tmean(T.softplus(fake_logits)))


def r1_penalty(d_fn, real_input: Tensor, gamma: float) -> Tensor:
    """(gamma/2) * mean over samples of ||d logit / d input||^2.

    `real_input` must require grad; the penalty stays differentiable w.r.t.
    the critic parameters (the input gradient is built with its own graph).
    The lazy schedule (apply every N steps, scaled by N) lives in the trainer.
    """
    logits = d_fn(real_input)
    (gx,) = grad(T.tsum(logits), [real_input], create_graph=True)
    if gx is None:
        return Tensor(np.float32(0.0))
    per_sample = T.tsum(T.square(gx), axis=tuple(range(1, gx.data.ndim)))
    return T.mul(T.tmean(per_sample), gamma / 2.0)


def log_softmax(logits: Tensor, axis: int) -> Tensor:
    shift = Tensor(logits.data.max(axis=axis, keepdims=True))  # constant, exact
    z = T.sub(logits, shift)
    lse = T.tlog(T.tsum(T.texp(z), axis=axis, keepdims=True))
    return T.sub(z, lse)


def semantic_matching_loss(seg_logits: Tensor, class_map: Tensor) -> Tensor:
    """Soft cross-entropy between the critic's per-pixel class prediction
    and the conditioning layout, averaged over pixels."""
    if seg_logits.shape != class_map.shape:
        raise ShapeMismatch(f"seg logits {seg_logits.shape} vs layout {class_map.shape}")
    ce = T.mul(T.tsum(T.mul(class_map, log_softmax(seg_logits, axis=1)), axis=1), -1.0)
    return T.tmean(ce)


def segment_fidelity_loss(segment_logits: Tensor, skipped: np.ndarray, branch: str) -> Tensor:
    """Mean logistic loss over non-skipped segments.

    branch: d_real / g want high logits (softplus(-l)); d_fake wants low
    (softplus(l)).  Zero-mass segments are excluded from the mean.
    """
    if branch not in ("d_real", "d_fake", "g"):
        raise ValueError(f"unknown branch {branch!r}")
    alive = (~np.asarray(skipped, dtype=bool)).astype(np.float32)
    n = float(alive.sum())
    if n == 0:
        raise AllSegmentsSkipped("every segment had zero pooled mass")
    sign = 1.0 if branch == "d_fake" else -1.0
    per = T.softplus(T.mul(segment_logits, sign))
    return T.div(T.tsum(T.mul(per, Tensor(alive))), n)


def _hard_edge_counts(a_cls: np.ndarray, b_cls: np.ndarray):
    eh_a = a_cls[:, :, 1:] != a_cls[:, :, :-1]
    eh_b = b_cls[:, :, 1:] != b_cls[:, :, :-1]
    ev_a = a_cls[:, 1:, :] != a_cls[:, :-1, :]
    ev_b = b_cls[:, 1:, :] != b_cls[:, :-1, :]
    inter = (eh_a & eh_b).sum(axis=(1, 2)) + (ev_a & ev_b).sum(axis=(1, 2))
    union = (eh_a | eh_b).sum(axis=(1, 2)) + (ev_a | ev_b).sum(axis=(1, 2))
    return inter.astype(np.float64), union.astype(np.float64)


def _tv_maps(p: Tensor):
    th = T.tsum(T.tabs(T.sub(p[:, :, :, 1:], p[:, :, :, :-1])), axis=1)
    tv = T.tsum(T.tabs(T.sub(p[:, :, 1:, :], p[:, :, :-1, :])), axis=1)
    return th, tv


def edge_matching_loss(s_probs: Tensor, pred_probs: Tensor) -> Tensor:
    """Smoothed edge-IoU distance between argmax class maps.

    Value: mean over the batch of 1 - (|E∩E'|+1)/(|E∪E'|+1) on hard
    4-neighborhood class-change edges.  The gradient flows through a
    soft surrogate (L1 between class-probability total-variation maps),
    straight-through, since argmax itself has no gradient.
    """
    if s_probs.shape != pred_probs.shape:
        raise ShapeMismatch(f"{s_probs.shape} vs {pred_probs.shape}")
    inter, union = _hard_edge_counts(s_probs.data.argmax(axis=1),
                                     pred_probs.data.argmax(axis=1))
    hard = float(np.mean(1.0 - (inter + 1.0) / (union + 1.0)))
    th_s, tv_s = _tv_maps(s_probs)
    th_p, tv_p = _tv_maps(pred_probs)
    soft = T.add(T.tmean(T.tabs(T.sub(th_s, th_p))), T.tmean(T.tabs(T.sub(tv_s, tv_p))))
    return T.add(T.mul(soft, 1.0), float(hard - float(soft.data)))
