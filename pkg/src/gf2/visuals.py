"""Export helpers: scene image, class-colored layout, normalized depth map."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .compositor import Layout
from .ppm import write_ppm

# fixed class palette for layout visualizations (stable across runs)
CLASS_COLORS = np.array(
    [
        [-0.8, -0.8, -0.8],  # background: dark gray
        [1.0, -0.6, -0.6],   # circle: red
        [-0.6, 1.0, -0.6],   # square: green
        [-0.6, -0.6, 1.0],   # triangle: blue
    ],
    dtype=np.float32,
)


def layout_image(layout: Layout) -> np.ndarray:
    cls = layout.class_map.data.argmax(axis=0)
    return CLASS_COLORS[cls]


def depth_image(layout: Layout) -> np.ndarray:
    """Monotone grayscale: min depth -> 0 (black), max -> 255 (white)."""
    d = layout.depth_map.data
    lo, hi = float(d.min()), float(d.max())
    norm = np.zeros_like(d) if hi == lo else (d - lo) / (hi - lo)
    return np.repeat((norm * 2.0 - 1.0)[:, :, None], 3, axis=2).astype(np.float32)


def segments_summary(layout: Layout) -> list[dict]:
    out = []
    for i, seg in enumerate(layout.segments):
        p = seg.P.data
        mass = p / max(p.sum(), 1e-12)
        ys = mass.sum(axis=1)
        xs = mass.sum(axis=0)
        cy = float((ys * np.arange(len(ys))).sum())
        cx = float((xs * np.arange(len(xs))).sum())
        # bbox: smallest box holding the bulk of the shape mass
        thresh = 0.1 * p.max()
        rows, cols = np.nonzero(p >= thresh)
        bbox = [int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())] \
            if len(rows) else [0, 0, 0, 0]
        out.append({
            "index": i,
            "class": int(seg.M.data.argmax()),
            "class_probs": [float(v) for v in seg.M.data],
            "mean_depth": seg.mean_depth(),
            "centroid": [cy, cx],
            "bbox": bbox,
            "birth_step": seg.birth_step,
        })
    return out


def export_visuals(layout: Layout, image: np.ndarray, path_prefix) -> list[Path]:
    """Write image.ppm, layout.ppm, depth.ppm and segments.json."""
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    files = []
    for name, arr in (("image", image), ("layout", layout_image(layout)),
                      ("depth", depth_image(layout))):
        p = prefix.parent / f"{prefix.name}{name}.ppm"
        write_ppm(p, arr)
        files.append(p)
    p = prefix.parent / f"{prefix.name}segments.json"
    p.write_text(json.dumps(segments_summary(layout), indent=1))
    files.append(p)
    return files
