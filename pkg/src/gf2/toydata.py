"""Procedural flat-color scenes with exact panoptic ground truth.

Scenes hold 1..n_max shapes (circle / square / triangle) painted over a
dark background in z-order, no anti-aliasing, so masks and attributes are
exact.  Each shape kind owns two palette colors, which is what lets a
rule-based nearest-color segmentor recover classes from rendered (or
generated) images and serve as the evaluation oracle.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .compositor import Layout, layout_from_hard_masks, save_layout, load_layout
from .config import SceneConfig
from .errors import BadConfig
from .ppm import read_ppm, write_ppm
from .rng import Rng

# palette entries 0..1: background shades; 2..7: shape colors (two per kind)
PALETTE = np.array(
    [
        [-0.75, -0.75, -0.70],  # background shade 0
        [-0.55, -0.58, -0.52],  # background shade 1
        [0.80, -0.70, -0.70],   # circle: red
        [0.90, 0.25, -0.80],    # circle: orange
        [-0.70, 0.65, -0.60],   # square: green
        [-0.70, -0.40, 0.85],   # square: blue
        [0.90, 0.80, -0.75],    # triangle: yellow
        [0.55, -0.70, 0.70],    # triangle: purple
    ],
    dtype=np.float32,
)
CLASS_OF_PALETTE = np.array([0, 0, 1, 1, 2, 2, 3, 3])
NUM_CLASSES = 4
KIND_NAMES = ["background", "circle", "square", "triangle"]


@dataclass
class Shape:
    kind: int   # 1=circle, 2=square, 3=triangle
    color: int  # 0..5 shape-color index; palette entry is color+2
    cx: int
    cy: int
    size: int
    z: int      # later paints over earlier


@dataclass
class ToyScene:
    shapes: list[Shape]
    background: int  # background shade 0|1
    resolution: int
    image: np.ndarray          # (R,R,3) float in [-1,1]
    gt_instances: np.ndarray   # (R,R) int, 0 = background
    gt_classes: np.ndarray     # (R,R) int in [0, NUM_CLASSES)
    gt_depth_rank: list[float]  # per instance id (0 = background)

    @property
    def segment_count(self) -> int:
        return len(self.shapes) + 1  # background is a segment too

    def layout(self, k_max: int) -> Layout:
        classes = [0] + [s.kind for s in self.shapes]
        return layout_from_hard_masks(self.gt_instances, self.gt_classes,
                                      self.gt_depth_rank, NUM_CLASSES, k_max,
                                      class_per_instance=classes)


def _shape_mask(shape: Shape, res: int) -> np.ndarray:
    ys, xs = np.mgrid[0:res, 0:res]
    if shape.kind == 1:
        return (xs - shape.cx) ** 2 + (ys - shape.cy) ** 2 <= shape.size ** 2
    if shape.kind == 2:
        return (np.abs(xs - shape.cx) <= shape.size) & (np.abs(ys - shape.cy) <= shape.size)
    if shape.kind == 3:
        top = shape.cy - shape.size
        dy = ys - top
        return (dy >= 0) & (ys <= shape.cy + shape.size) & (2 * np.abs(xs - shape.cx) <= dy)
    raise BadConfig(f"unknown shape kind {shape.kind}")


def render_scene(shapes: list[Shape], background: int, res: int):
    """Painter's algorithm by z-order; returns (image, instance ids, class ids)."""
    instances = np.zeros((res, res), dtype=np.int32)
    classes = np.zeros((res, res), dtype=np.int32)
    image = np.empty((res, res, 3), dtype=np.float32)
    image[:] = PALETTE[background]
    for idx, shape in enumerate(sorted(shapes, key=lambda s: s.z)):
        mask = _shape_mask(shape, res)
        image[mask] = PALETTE[2 + shape.color]
        instances[mask] = idx + 1
        classes[mask] = shape.kind
    return image, instances, classes


def gen_scene(cfg: SceneConfig, rng: Rng) -> ToyScene:
    res = cfg.resolution
    if cfg.n_min < 0 or cfg.n_max < cfg.n_min or cfg.size_max < cfg.size_min:
        raise BadConfig("invalid scene config ranges")
    if cfg.size_max * 2 + 2 > res:
        raise BadConfig("shapes too large for the resolution")
    n = int(rng.integers(cfg.n_min, cfg.n_max))
    shapes = []
    for i in range(n):
        kind = int(rng.integers(1, 3))
        color = (kind - 1) * 2 + int(rng.integers(0, 1))
        size = int(rng.integers(cfg.size_min, cfg.size_max))
        cx = int(rng.integers(size, res - 1 - size))
        cy = int(rng.integers(size, res - 1 - size))
        shapes.append(Shape(kind=kind, color=color, cx=cx, cy=cy, size=size, z=i))
    background = int(rng.integers(0, 1))
    image, instances, classes = render_scene(shapes, background, res)
    # later z-order paints over earlier, so rank grows with z; background sits at 0
    ranks = [0.0] + [float(s.z + 1) for s in sorted(shapes, key=lambda s: s.z)]
    return ToyScene(shapes=shapes, background=background, resolution=res, image=image,
                    gt_instances=instances, gt_classes=classes, gt_depth_rank=ranks)


def count_occluded_pixels(scene: ToyScene) -> int:
    """Pixels covered by more than one shape (the hidden ones)."""
    cover = np.zeros((scene.resolution, scene.resolution), dtype=np.int32)
    for shape in scene.shapes:
        cover += _shape_mask(shape, scene.resolution)
    return int((cover > 1).sum())


# -- rule-based oracle --------------------------------------------------------------


def quantize_to_palette(image: np.ndarray) -> np.ndarray:
    """Nearest palette entry per pixel; unknown colors snap to the closest."""
    flat = image.reshape(-1, 3)
    d2 = ((flat[:, None, :] - PALETTE[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1).reshape(image.shape[:2])


def oracle_segment(image: np.ndarray):
    """(class map, instance map) from a flat-color image.

    Classes come from the palette->kind table; instances are 4-connected
    components of same-palette pixels, background merged into instance 0.
    """
    pal = quantize_to_palette(image)
    classes = CLASS_OF_PALETTE[pal]
    instances = np.zeros(pal.shape, dtype=np.int32)
    next_id = 1
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    for entry in range(2, len(PALETTE)):
        mask = pal == entry
        if not mask.any():
            continue
        labeled, n = ndimage.label(mask, structure=structure)
        for comp in range(1, n + 1):
            instances[labeled == comp] = next_id
            next_id += 1
    return classes, instances


def extract_attributes(image_or_scene):
    """Per-object {kind, color, centroid, area} from masks (oracle-based)."""
    if isinstance(image_or_scene, ToyScene):
        image = image_or_scene.image
    else:
        image = image_or_scene
    pal = quantize_to_palette(image)
    classes, instances = oracle_segment(image)
    objects = []
    for inst in range(1, instances.max() + 1):
        mask = instances == inst
        ys, xs = np.nonzero(mask)
        entry = int(pal[ys[0], xs[0]])
        objects.append({
            "kind": int(CLASS_OF_PALETTE[entry]),
            "color": entry - 2,
            "centroid": (float(ys.mean()), float(xs.mean())),
            "area": int(mask.sum()),
        })
    return objects


# -- dataset on disk ------------------------------------------------------------------


@dataclass
class Dataset:
    images: list[np.ndarray]   # (R,R,3) float
    layouts: list[Layout]
    counts: np.ndarray         # segments per scene
    resolution: int

    def __len__(self):
        return len(self.images)


def make_scenes(cfg: SceneConfig, count: int, seed: int, split: str = "train") -> list[ToyScene]:
    root = Rng(seed).child("toydata").child(split)
    return [gen_scene(cfg, root.child(i)) for i in range(count)]


def scenes_to_dataset(scenes: list[ToyScene], k_max: int) -> Dataset:
    return Dataset(
        images=[s.image for s in scenes],
        layouts=[s.layout(k_max) for s in scenes],
        counts=np.array([s.segment_count for s in scenes]),
        resolution=scenes[0].resolution,
    )


def write_dataset(outdir, cfg: SceneConfig, count: int, seed: int, k_max: int,
                  split: str = "train"):
    out = Path(outdir) / split
    out.mkdir(parents=True, exist_ok=True)
    scenes = make_scenes(cfg, count, seed, split)
    for i, scene in enumerate(scenes):
        write_ppm(out / f"img_{i:06d}.ppm", scene.image)
        save_layout(scene.layout(k_max), out / f"layout_{i:06d}.bin",
                    out / f"layout_{i:06d}.json")
    manifest = {"seed": seed, "config": cfg.__dict__, "count": count, "k_max": k_max,
                "split": split}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out


def load_dataset(split_dir) -> Dataset:
    split_dir = Path(split_dir)
    manifest = json.loads((split_dir / "manifest.json").read_text())
    images, layouts = [], []
    for i in range(manifest["count"]):
        images.append(read_ppm(split_dir / f"img_{i:06d}.ppm"))
        layouts.append(load_layout(split_dir / f"layout_{i:06d}.bin",
                                   split_dir / f"layout_{i:06d}.json"))
    counts = np.array([lay.k for lay in layouts])
    return Dataset(images=images, layouts=layouts, counts=counts,
                   resolution=manifest["config"]["resolution"])
