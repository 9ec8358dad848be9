"""Evaluation orchestration: renders samples from a checkpoint and feeds the
pure metric functions.  Feature distances use the frozen image-critic stem
(raw downsampled pixels if no checkpoint is supplied)."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .compositor import Layout
from .errors import TooFewProbes
from .metrics import (EvalReport, ari, dci_scores, knn_precision_recall, miou_pacc,
                      pairwise_feature_distance, per_class_iou, pixel_proxy_features,
                      rho_from_deltas)
from .rng import Rng
from .tensor import Tensor
from .toydata import extract_attributes, oracle_segment
from .trainer import Models, generate_scene


def stem_features(models: Models, images: np.ndarray) -> np.ndarray:
    """Frozen critic-stem features for (N,H,W,3) images; layout channels zeroed."""
    cfg = models.cfg.model
    n = images.shape[0]
    feats = []
    with T.no_grad():
        for start in range(0, n, 16):
            chunk = images[start : start + 16]
            x = chunk.transpose(0, 3, 1, 2).astype(np.float32)
            s = np.zeros((len(chunk), cfg.num_classes + cfg.k_max) + x.shape[2:], np.float32)
            combined = Tensor(np.concatenate([s, x], axis=1))
            out = models.d_image.forward_combined(combined, heads=())
            feats.append(out["stem"].data.reshape(len(chunk), -1))
    return np.concatenate(feats)


def proxy_features(models: Models | None, images: np.ndarray) -> tuple[np.ndarray, str]:
    if models is None:
        return pixel_proxy_features(images), "pixels-8x8"
    return stem_features(models, images), "critic-stem"


def render_layout(models: Models, layout: Layout, seed: int) -> np.ndarray:
    rng = Rng(seed).child("render_layout")
    with T.no_grad(), models.ema_g2.applied(models.executor.net.parameters()):
        z = rng.child("style").normal((layout.k, models.cfg.model.d_z))
        styles = models.executor.map_style_latents(layout, z)
        img = models.executor.execute(layout, styles, rng.child("noise"))
    return img.data


def consistency_eval(models: Models, layouts: list[Layout], seed: int = 0,
                     class_rows: list | None = None):
    """Render each layout once and compare the oracle segmentation back to it.

    When `class_rows` is a list, per-class IoU rows are appended to it for
    the CSV breakdown.
    """
    num_classes = models.cfg.model.num_classes
    mious, paccs, aris = [], [], []
    for i, layout in enumerate(layouts):
        img = render_layout(models, layout, seed * 100003 + i)
        pred_cls, pred_inst = oracle_segment(img)
        gt_cls = layout.class_map.data.argmax(axis=0)
        gt_inst = layout.A.data.argmax(axis=0)
        m, p = miou_pacc(pred_cls, gt_cls)
        mious.append(m)
        paccs.append(p)
        aris.append(ari(pred_inst, gt_inst))
        if class_rows is not None:
            for row in per_class_iou(pred_cls, gt_cls, num_classes):
                row["scene"] = i
                class_rows.append(row)
    return float(np.mean(mious)), float(np.mean(paccs)), float(np.mean(aris))


def diversity_proxy(models: Models, layout: Layout, n: int = 20, seed: int = 0,
                    use_stem: bool = True) -> float:
    """Mean pairwise feature distance over n renders of one layout."""
    if n < 2:
        raise ValueError("diversity needs n >= 2 samples")
    imgs = np.stack([render_layout(models, layout, seed * 1009 + j) for j in range(n)])
    feats, _ = proxy_features(models if use_stem else None, imgs)
    return pairwise_feature_distance(feats)


def generation_eval(models: Models, real_images: np.ndarray, n_fake: int,
                    seed: int = 0, k: int = 3):
    fakes = np.stack([generate_scene(models, seed * 7919 + i)[2].data
                      for i in range(n_fake)])
    real_f, space = proxy_features(models, real_images)
    fake_f, _ = proxy_features(models, fakes)
    precision, recall = knn_precision_recall(real_f, fake_f, k=k)
    return precision, recall, space


# -- controllability -----------------------------------------------------------------


def _match_objects(base_objs: list[dict], new_objs: list[dict], res: int) -> np.ndarray:
    """Greedy nearest-centroid matching; returns per-base-object deltas."""
    n_prop = 5  # dy, dx, darea, color changed, kind changed
    deltas = np.zeros((len(base_objs), n_prop))
    used = set()
    for i, b in enumerate(base_objs):
        best, best_d = None, None
        for j, o in enumerate(new_objs):
            if j in used:
                continue
            d = np.hypot(b["centroid"][0] - o["centroid"][0],
                         b["centroid"][1] - o["centroid"][1])
            if best_d is None or d < best_d:
                best, best_d = j, d
        if best is None or best_d > res / 2:
            deltas[i] = [res / 4, res / 4, b["area"], 1.0, 1.0]  # object lost
            continue
        used.add(best)
        o = new_objs[best]
        deltas[i] = [
            abs(b["centroid"][0] - o["centroid"][0]),
            abs(b["centroid"][1] - o["centroid"][1]),
            abs(b["area"] - o["area"]),
            float(b["color"] != o["color"]),
            float(b["kind"] != o["kind"]),
        ]
    return deltas


def controllability_eval(models: Models, n_probes: int = 60, seed: int = 0):
    """Perturb one segment latent at a time and correlate attribute changes."""
    if n_probes < 30:
        raise TooFewProbes(f"{n_probes} probes < 30")
    cfg = models.cfg.model
    res = cfg.resolution
    rng = Rng(seed).child("ctrl")
    deltas_all, targets_all = [], []
    scene_idx = 0
    probes_done = 0
    while probes_done < n_probes:
        scene_seed = seed * 31 + scene_idx
        scene_idx += 1
        layout, styles, img = generate_scene(models, scene_seed)
        base_objs = extract_attributes(img.data)
        if not base_objs or layout.k < 2:
            continue
        deltas_scene, targets_scene = [], []
        per_scene = min(12, n_probes - probes_done)
        for j in range(per_scene):
            prng = rng.child(f"{scene_idx}/{j}")
            tgt = int(prng.child("pick").integers(0, layout.k - 1))
            which = "structure" if j % 2 == 0 else "style"
            with T.no_grad(), \
                 models.ema_g1.applied(models.planner.net.parameters()), \
                 models.ema_g2.applied(models.executor.net.parameters()):
                if which == "structure":
                    z_new = prng.child("z").normal((cfg.d_z,))
                    new_layout = models.planner.regenerate_segment(
                        layout, tgt, z_new, prng.child("regen"))
                    new_styles = models.executor.map_style_latents(
                        new_layout, np.stack([p[0] for p in styles.provenance]))
                    new_img = models.executor.execute(new_layout, new_styles,
                                                      Rng(scene_seed).child("gen/render"))
                else:
                    zs = np.stack([p[0] for p in styles.provenance])
                    zs[tgt] = prng.child("z").normal((cfg.d_z,))
                    new_styles = models.executor.map_style_latents(layout, zs)
                    new_img = models.executor.execute(layout, new_styles,
                                                      Rng(scene_seed).child("gen/render"))
            new_objs = extract_attributes(new_img.data)
            deltas_scene.append(_match_objects(base_objs, new_objs, res))
            targets_scene.append(tgt)
            probes_done += 1
        deltas_all.append((np.stack(deltas_scene), np.array(targets_scene)))
    obj_rhos, prop_rhos = [], []
    for deltas, targets in deltas_all:
        if len(deltas) < 6:
            continue
        o, p = _rho_no_min(deltas, targets)
        obj_rhos.append(o)
        prop_rhos.append(p)
    return float(np.mean(obj_rhos)), float(np.mean(prop_rhos))


def _rho_no_min(deltas, targets):
    """rho_from_deltas without the >=30 probe gate (applied per scene)."""
    padded = np.concatenate([deltas] * max(1, int(np.ceil(30 / len(deltas)))))
    padded_t = np.concatenate([targets] * max(1, int(np.ceil(30 / len(targets)))))
    return rho_from_deltas(padded[:max(30, len(deltas))], padded_t[:max(30, len(targets))])


# -- disentanglement -------------------------------------------------------------------


def dci_eval(models: Models, n_samples: int = 200, seed: int = 0, k_fix: int = 3) -> dict:
    """DCI over scenes planned with a fixed segment count so latent dims align."""
    cfg = models.cfg.model
    latents, attrs = [], []
    for i in range(n_samples):
        rng = Rng(seed * 6007 + i).child("dci")
        with T.no_grad(), \
             models.ema_g1.applied(models.planner.net.parameters()), \
             models.ema_g2.applied(models.executor.net.parameters()):
            layout = models.planner.plan_scene(rng.child("plan"),
                                               force_counts=[k_fix])
            z_style = rng.child("style").normal((layout.k, cfg.d_z))
            styles = models.executor.map_style_latents(layout, z_style)
            img = models.executor.execute(layout, styles, rng.child("render"))
        z_struct = np.stack([s.z for s in layout.segments])
        latents.append(np.concatenate([z_struct.ravel(), z_style.ravel()]))
        objs = extract_attributes(img.data)
        row = []
        for seg_i in range(k_fix):
            mask = layout.A.data.argmax(axis=0) == seg_i
            best, best_ov = None, 0
            _, inst = oracle_segment(img.data)
            for j, o in enumerate(objs):
                ov = float((mask & (inst == j + 1)).sum())
                if ov > best_ov:
                    best, best_ov = o, ov
            if best is None:
                row.extend([0.0] * 5)
            else:
                row.extend([best["kind"], best["color"], best["centroid"][0],
                            best["centroid"][1], best["area"]])
        attrs.append(row)
    return dci_scores(np.array(latents), np.array(attrs))


def full_report(models: Models, val_layouts: list[Layout], val_images: np.ndarray,
                seed: int = 0, n_consistency: int = 32, n_diversity_layouts: int = 4,
                n_fake: int = 48, n_probes: int = 60, n_dci: int = 120) -> EvalReport:
    report = EvalReport()
    class_rows: list = []
    report.miou, report.pacc, report.ari = consistency_eval(
        models, val_layouts[:n_consistency], seed, class_rows=class_rows)
    report.per_class = class_rows
    divs = [diversity_proxy(models, lay, n=20, seed=seed + i)
            for i, lay in enumerate(val_layouts[:n_diversity_layouts])]
    report.diversity = float(np.mean(divs))
    report.precision, report.recall, space = generation_eval(
        models, val_images[:n_fake], n_fake, seed)
    report.proxy_space = space
    report.object_rho, report.property_rho = controllability_eval(models, n_probes, seed)
    dci = dci_eval(models, n_dci, seed)
    report.dci = {k: (float(v) if not isinstance(v, np.ndarray) else None)
                  for k, v in dci.items() if k != "importance"}
    report.sample_counts = {"consistency": n_consistency,
                            "diversity_layouts": n_diversity_layouts,
                            "diversity_renders": 20,
                            "fake": n_fake, "probes": n_probes, "dci": n_dci}
    report.seeds = {"eval": seed}
    return report
