"""Depth-ordered composition of planned segments into a scene layout.

Each segment owns a spatial shape distribution P (sums to 1 over the
grid), a class distribution M, and an unconstrained per-pixel depth map d.
The per-pixel assignment distribution is softmax over segments of
(d_i + log P_i), so deeper (larger-d) segments win overlaps wherever their
shape mass competes.  Also hosts the hierarchical noise that keeps the
layout critic's task hard on discrete targets.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import BadResolution, EmptySegmentList, ShapeMismatch
from .rng import Rng
from .tensor import Tensor

LOG_CLAMP = -30.0  # lower bound for log P, keeps Eq. 4 logits finite


@dataclass
class SegmentDraft:
    """One planned object: shape distribution, class distribution, depth."""

    P: Tensor  # (H,W), sums to 1
    M: Tensor  # (C,), sums to 1
    d: Tensor  # (H,W), unconstrained
    z: np.ndarray | None = None  # raw structure latent
    u: np.ndarray | None = None  # mapped structure latent
    birth_step: int = 1
    slot: int = 0

    def mean_depth(self) -> float:
        return float(self.d.data.mean())

    def bytes_key(self) -> bytes:
        return self.P.data.tobytes() + self.M.data.tobytes() + self.d.data.tobytes()


@dataclass
class Layout:
    """Composited scene: segments plus derived per-pixel maps.

    A is (k,H,W), class_map (C,H,W), instance_map (k_max,H,W) zero-padded,
    depth_map (H,W).  `dense_class` overrides class_map for the
    non-compositional single-pass mode.
    """

    segments: list
    A: Tensor
    class_map: Tensor
    instance_map: Tensor
    depth_map: Tensor
    k_max: int
    dense_class: Tensor | None = None

    @property
    def k(self) -> int:
        return len(self.segments)

    @property
    def hw(self):
        return self.A.shape[-2], self.A.shape[-1]

    def tensor(self) -> Tensor:
        """Critic input: class channels then instance channels, (C+k_max,H,W)."""
        return T.concat([self.class_map, self.instance_map], axis=0)


def composite_maps(P: Tensor, d: Tensor, M: Tensor, k_max: int,
                   dense_class: Tensor | None = None) -> dict:
    """Batched composition. P,d: (B,k,H,W); M: (B,k,C). Returns batched maps."""
    b, k, h, w = P.shape
    if k > k_max:
        raise ShapeMismatch(f"{k} segments exceed k_max={k_max}")
    logit = T.add(d, T.tlog(T.maximum(P, float(np.exp(LOG_CLAMP)))))
    A = T.softmax(logit, axis=1)
    if dense_class is not None:
        class_map = dense_class
    else:
        flat = T.swap_last2(T.reshape(A, (b, k, h * w)))       # (B,HW,k)
        class_map = T.transpose(T.reshape(T.matmul(flat, M), (b, h, w, -1)), (0, 3, 1, 2))
    if k < k_max:
        pad = Tensor(np.zeros((b, k_max - k, h, w), dtype=np.float32))
        instance_map = T.concat([A, pad], axis=1)
    else:
        instance_map = A
    depth_map = T.tsum(T.mul(A, d), axis=1)
    return {"A": A, "class_map": class_map, "instance_map": instance_map,
            "depth_map": depth_map,
            "tensor": T.concat([class_map, instance_map], axis=1)}


def composite(segments: list, k_max: int, dense_class: Tensor | None = None) -> Layout:
    """Single-scene composition of SegmentDrafts into a Layout."""
    if not segments:
        raise EmptySegmentList("cannot composite zero segments")
    P = T.stack([s.P for s in segments], axis=0)
    d = T.stack([s.d for s in segments], axis=0)
    M = T.stack([s.M for s in segments], axis=0)
    b1 = composite_maps(
        T.reshape(P, (1,) + P.shape), T.reshape(d, (1,) + d.shape),
        T.reshape(M, (1,) + M.shape), k_max,
        dense_class=None if dense_class is None else T.reshape(dense_class, (1,) + dense_class.shape),
    )
    return Layout(
        segments=list(segments),
        A=T.reshape(b1["A"], b1["A"].shape[1:]),
        class_map=T.reshape(b1["class_map"], b1["class_map"].shape[1:]),
        instance_map=T.reshape(b1["instance_map"], b1["instance_map"].shape[1:]),
        depth_map=T.reshape(b1["depth_map"], b1["depth_map"].shape[1:]),
        k_max=k_max,
        dense_class=dense_class,
    )


def layout_from_hard_masks(instance_ids: np.ndarray, class_ids: np.ndarray,
                           depth_ranks: list[float], num_classes: int, k_max: int,
                           class_per_instance: list[int] | None = None) -> Layout:
    """Build a Layout from a ground-truth panoptic mask (one-hot A)."""
    h, w = instance_ids.shape
    ids = np.unique(instance_ids)
    segments = []
    maps_P, maps_d, rows_M = [], [], []
    for j, inst in enumerate(ids):
        mask = (instance_ids == inst).astype(np.float32)
        area = float(mask.sum())
        P = mask / max(area, 1.0)
        if class_per_instance is not None:
            cls = class_per_instance[int(inst)]
        else:
            cls = int(np.bincount(class_ids[instance_ids == inst]).argmax())
        M = np.zeros(num_classes, dtype=np.float32)
        M[cls] = 1.0
        rank = float(depth_ranks[int(inst)]) if int(inst) < len(depth_ranks) else 0.0
        d = np.full((h, w), rank, dtype=np.float32)
        seg = SegmentDraft(P=Tensor(P), M=Tensor(M), d=Tensor(d), birth_step=1, slot=j)
        segments.append(seg)
        maps_P.append(P)
        maps_d.append(d)
        rows_M.append(M)
    k = len(segments)
    A = np.stack([(instance_ids == inst).astype(np.float32) for inst in ids])
    class_map = np.zeros((num_classes, h, w), dtype=np.float32)
    for c in range(num_classes):
        class_map[c] = (class_ids == c).astype(np.float32)
    inst_map = np.zeros((k_max, h, w), dtype=np.float32)
    inst_map[:k] = A
    ranks = np.array([float(depth_ranks[int(i)]) for i in ids], dtype=np.float32)
    depth_map = ranks[np.searchsorted(ids, instance_ids)]
    return Layout(segments=segments, A=Tensor(A), class_map=Tensor(class_map),
                  instance_map=Tensor(inst_map), depth_map=Tensor(depth_map), k_max=k_max)


# -- hierarchical noise ---------------------------------------------------------


@dataclass
class NoiseConfig:
    sigma: float = 0.2
    levels: list[int] = field(default_factory=list)  # empty -> {res/4, res/2, res}

    def resolved_levels(self, res: int) -> list[int]:
        levels = self.levels or [max(res // 4, 1), max(res // 2, 1), res]
        for lv in levels:
            if res % lv:
                raise BadResolution(f"noise level {lv} does not divide resolution {res}")
        return levels


def noise_maps(res: int, cfg: NoiseConfig, rng: Rng, count: int = 1) -> np.ndarray:
    """(count,res,res) sums of per-level white noise upsampled to `res`."""
    levels = cfg.resolved_levels(res)
    out = np.zeros((count, res, res), dtype=np.float32)
    if cfg.sigma == 0.0:
        return out
    for lv in levels:
        grid = rng.normal((count, lv, lv), std=cfg.sigma)
        f = res // lv
        out += np.repeat(np.repeat(grid, f, axis=1), f, axis=2)
    return out


def hierarchical_noise(res: int, cfg: NoiseConfig, rng: Rng) -> np.ndarray:
    return noise_maps(res, cfg, rng, count=1)[0]


def noisy_layout(layout_tensor: Tensor, cfg: NoiseConfig, rng: Rng) -> Tensor:
    """Add independent hierarchical noise per channel; keeps the input's graph."""
    shape = layout_tensor.shape
    res = shape[-1]
    n_maps = int(np.prod(shape[:-2]))
    noise = noise_maps(res, cfg, rng, count=n_maps).reshape(shape)
    return T.add(layout_tensor, Tensor(noise))


# -- serialization ----------------------------------------------------------------


def save_layout(layout: Layout, path_bin, path_json):
    """Flat binary (A f32, argmax class ids u8, depth f32) + JSON sidecar."""
    a = layout.A.data.astype("<f4")
    cls = layout.class_map.data.argmax(axis=0).astype(np.uint8)
    depth = layout.depth_map.data.astype("<f4")
    with open(path_bin, "wb") as f:
        f.write(a.tobytes())
        f.write(cls.tobytes())
        f.write(depth.tobytes())
    side = {
        "h": int(a.shape[1]), "w": int(a.shape[2]), "k": int(a.shape[0]),
        "k_max": layout.k_max,
        "segments": [
            {"M": [float(v) for v in s.M.data], "mean_depth": s.mean_depth(),
             "birth_step": s.birth_step, "slot": s.slot}
            for s in layout.segments
        ],
    }
    Path(path_json).write_text(json.dumps(side))


def load_layout(path_bin, path_json) -> Layout:
    side = json.loads(Path(path_json).read_text())
    h, w, k, k_max = side["h"], side["w"], side["k"], side["k_max"]
    raw = Path(path_bin).read_bytes()
    a_bytes = k * h * w * 4
    a = np.frombuffer(raw[:a_bytes], dtype="<f4").reshape(k, h, w).copy()
    cls = np.frombuffer(raw[a_bytes : a_bytes + h * w], dtype=np.uint8).reshape(h, w)
    depth = np.frombuffer(raw[a_bytes + h * w :], dtype="<f4").reshape(h, w).copy()
    num_classes = len(side["segments"][0]["M"])
    class_map = np.zeros((num_classes, h, w), dtype=np.float32)
    for c in range(num_classes):
        class_map[c] = cls == c
    segments = []
    for i, meta in enumerate(side["segments"]):
        mass = a[i].sum()
        P = a[i] / mass if mass > 0 else np.full((h, w), 1.0 / (h * w), dtype=np.float32)
        segments.append(SegmentDraft(
            P=Tensor(P), M=Tensor(np.array(meta["M"], dtype=np.float32)),
            d=Tensor(np.full((h, w), meta["mean_depth"], dtype=np.float32)),
            birth_step=meta["birth_step"], slot=meta["slot"],
        ))
    inst = np.zeros((k_max, h, w), dtype=np.float32)
    inst[:k] = a
    return Layout(segments=segments, A=Tensor(a), class_map=Tensor(class_map),
                  instance_map=Tensor(inst), depth_map=Tensor(depth), k_max=k_max)
