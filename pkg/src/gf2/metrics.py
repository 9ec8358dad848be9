"""Evaluation quantities: layout-image consistency (mIoU / pAcc / ARI),
style diversity, k-NN manifold precision/recall, controllability
correlations, and regressor-based disentanglement scores.

No pretrained networks: distances use a frozen critic stem when a
checkpoint is available, otherwise downsampled raw pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, TooFewProbes


@dataclass
class EvalReport:
    miou: float = 0.0
    pacc: float = 0.0
    ari: float = 0.0
    diversity: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    dci: dict = field(default_factory=dict)
    object_rho: float = 0.0
    property_rho: float = 0.0
    sample_counts: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    proxy_space: str = "pixels-8x8"
    per_class: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "miou": self.miou, "pacc": self.pacc, "ari": self.ari,
            "diversity": self.diversity, "precision": self.precision,
            "recall": self.recall, "dci": self.dci,
            "object_rho": self.object_rho, "property_rho": self.property_rho,
            "sample_counts": self.sample_counts, "seeds": self.seeds,
            "proxy_space": self.proxy_space,
        }


def miou_pacc(pred_classes: np.ndarray, gt_classes: np.ndarray,
              class_weights: np.ndarray | None = None):
    """Class-weighted mean IoU (weights default to gt class frequency) and
    pixel accuracy; classes absent from both maps are excluded."""
    if pred_classes.shape != gt_classes.shape:
        raise ShapeMismatch(f"{pred_classes.shape} vs {gt_classes.shape}")
    pred = pred_classes.ravel()
    gt = gt_classes.ravel()
    pacc = float((pred == gt).mean())
    classes = np.union1d(np.unique(pred), np.unique(gt))
    ious, weights = [], []
    for c in classes:
        inter = float(((pred == c) & (gt == c)).sum())
        union = float(((pred == c) | (gt == c)).sum())
        if union == 0:
            continue
        ious.append(inter / union)
        if class_weights is not None:
            weights.append(float(class_weights[int(c)]))
        else:
            weights.append(float((gt == c).sum()))
    w = np.asarray(weights, dtype=np.float64)
    if w.sum() == 0:
        w = np.ones_like(w)
    miou = float((np.asarray(ious) * w).sum() / w.sum())
    return miou, pacc


def ari(pred_instances: np.ndarray, gt_instances: np.ndarray) -> float:
    """Hubert-Arabie adjusted Rand index over pixel partitions.

    Degenerate cases (both partitions a single cluster, or all singletons)
    return 1.0 by the usual convention.
    """
    a = pred_instances.ravel()
    b = gt_instances.ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"{pred_instances.shape} vs {gt_instances.shape}")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    na, nb = ai.max() + 1, bi.max() + 1
    table = np.zeros((na, nb), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table.astype(np.float64)).sum()
    sum_a = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def pairwise_feature_distance(feats: np.ndarray) -> float:
    """Mean over pairs of (1 - cosine similarity); 0 for identical samples."""
    n = feats.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    flat = feats.reshape(n, -1).astype(np.float64)
    norms = np.linalg.norm(flat, axis=1)
    norms = np.where(norms == 0, 1.0, norms)
    unit = flat / norms[:, None]
    sim = unit @ unit.T
    iu = np.triu_indices(n, k=1)
    return float(np.mean(1.0 - sim[iu]))


def pixel_proxy_features(images: np.ndarray, grid: int = 8) -> np.ndarray:
    """Fallback feature space: images block-averaged to grid x grid."""
    n, h, w, c = images.shape
    f = h // grid
    pooled = images.reshape(n, grid, f, grid, f, c).mean(axis=(2, 4))
    return pooled.reshape(n, -1)


def knn_precision_recall(real_feats: np.ndarray, fake_feats: np.ndarray, k: int = 3):
    """Manifold membership via k-NN radii.

    precision: fraction of fakes within some real point's k-NN radius;
    recall: fraction of reals within some fake point's radius.
    """
    real = real_feats.reshape(len(real_feats), -1).astype(np.float64)
    fake = fake_feats.reshape(len(fake_feats), -1).astype(np.float64)
    if len(real) <= k or len(fake) <= k:
        raise ValueError(f"need more than k={k} points in each set")

    def radii(pts):
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        return np.sort(d, axis=1)[:, k]  # k-th neighbor excluding self at column 0

    def covered(queries, pts, r):
        d = np.linalg.norm(queries[:, None, :] - pts[None, :, :], axis=2)
        return (d <= r[None, :]).any(axis=1)

    precision = float(covered(fake, real, radii(real)).mean())
    recall = float(covered(real, fake, radii(fake)).mean())
    return precision, recall


def per_class_iou(pred_classes: np.ndarray, gt_classes: np.ndarray,
                  num_classes: int) -> list[dict]:
    """Per-class IoU and gt frequency; classes absent from both maps get iou=None."""
    pred = pred_classes.ravel()
    gt = gt_classes.ravel()
    rows = []
    for c in range(num_classes):
        union = float(((pred == c) | (gt == c)).sum())
        inter = float(((pred == c) & (gt == c)).sum())
        rows.append({
            "class": c,
            "iou": (inter / union) if union else None,
            "gt_frequency": float((gt == c).mean()),
        })
    return rows


# -- controllability ---------------------------------------------------------------


def _safe_abs_pearson(x: np.ndarray, y: np.ndarray) -> float:
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0  # zero-variance series carry no correlation signal
    return float(abs(np.corrcoef(x, y)[0, 1]))


def rho_from_deltas(deltas: np.ndarray, targets: np.ndarray):
    """Controllability correlations from probe responses.

    deltas: (probes, objects, properties) absolute attribute changes;
    targets: (probes,) index of the perturbed object per probe.
    Correlations are taken within groups of probes that perturbed the same
    object: object_rho over pairs of distinct objects' delta magnitudes,
    property_rho over property pairs of the same object.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    targets = np.asarray(targets)
    if deltas.shape[0] < 30:
        raise TooFewProbes(f"{deltas.shape[0]} probes < 30")
    n_obj, n_prop = deltas.shape[1], deltas.shape[2]
    mags = np.linalg.norm(deltas, axis=2)  # (probes, objects)
    obj_corrs, prop_corrs = [], []
    for tgt in np.unique(targets):
        sel = targets == tgt
        if sel.sum() < 3:
            continue
        m = mags[sel]
        for i in range(n_obj):
            for j in range(i + 1, n_obj):
                obj_corrs.append(_safe_abs_pearson(m[:, i], m[:, j]))
        d = deltas[sel]
        for i in range(n_obj):
            for p in range(n_prop):
                for q in range(p + 1, n_prop):
                    prop_corrs.append(_safe_abs_pearson(d[:, i, p], d[:, i, q]))
    object_rho = float(np.mean(obj_corrs)) if obj_corrs else 0.0
    property_rho = float(np.mean(prop_corrs)) if prop_corrs else 0.0
    return object_rho, property_rho


# -- disentanglement ------------------------------------------------------------------


def _ridge_fit(x: np.ndarray, y: np.ndarray, lam: float):
    xtx = x.T @ x + lam * np.eye(x.shape[1])
    return np.linalg.solve(xtx, x.T @ y)


def _entropy_score(p: np.ndarray, base: int) -> float:
    p = p / max(p.sum(), 1e-12)
    h = -(p * np.log(np.maximum(p, 1e-12))).sum()
    return 1.0 - h / np.log(base) if base > 1 else 1.0


def dci_scores(latents: np.ndarray, attributes: np.ndarray, lam: float = 1e-2,
               holdout: float = 0.5) -> dict:
    """Disentanglement / completeness / informativeness from ridge regressors.

    Importance matrix = |coefficients| column-normalized per attribute;
    D and C are 1 - entropy of rows/columns; informativeness is R^2 on the
    train half (I) and held-out half (I'); modularity follows the
    one-hot-template deviation computed on the importance matrix itself.
    Zero-variance attributes are dropped with a warning flag in the result.
    """
    latents = np.asarray(latents, dtype=np.float64)
    attributes = np.asarray(attributes, dtype=np.float64)
    keep = attributes.std(axis=0) > 1e-9
    dropped = int((~keep).sum())
    attributes = attributes[:, keep]
    if attributes.shape[1] == 0:
        raise ValueError("all attributes are degenerate (zero variance)")
    n = latents.shape[0]
    n_train = max(int(n * (1.0 - holdout)), 2)
    xm, xs = latents.mean(0), latents.std(0) + 1e-9
    ym, ys = attributes.mean(0), attributes.std(0) + 1e-9
    x = (latents - xm) / xs
    y = (attributes - ym) / ys
    xtr, xte = x[:n_train], x[n_train:]
    ytr, yte = y[:n_train], y[n_train:]
    coef = _ridge_fit(xtr, ytr, lam)  # (latents, attrs)
    imp = np.abs(coef)
    imp = imp / np.maximum(imp.sum(axis=0, keepdims=True), 1e-12)

    n_lat, n_attr = imp.shape
    row_mass = imp.sum(axis=1)
    d_scores = np.array([_entropy_score(imp[i], n_attr) for i in range(n_lat)])
    weights = row_mass / max(row_mass.sum(), 1e-12)
    disent = float((d_scores * weights).sum())
    c_scores = np.array([_entropy_score(imp[:, j], n_lat) for j in range(n_attr)])
    complete = float(c_scores.mean())

    def r2(xs_, ys_):
        pred = xs_ @ coef
        ss_res = ((ys_ - pred) ** 2).sum(axis=0)
        ss_tot = np.maximum((ys_ ** 2).sum(axis=0), 1e-12)
        return float(np.mean(1.0 - ss_res / ss_tot))

    # modularity: per-latent squared deviation from the best one-hot template
    mods = []
    for i in range(n_lat):
        row = imp[i]
        theta = row.max()
        if theta <= 1e-12 or n_attr < 2:
            mods.append(0.0)
            continue
        t = np.zeros_like(row)
        t[row.argmax()] = theta
        dev = ((row - t) ** 2).sum() / (theta ** 2 * (n_attr - 1))
        mods.append(1.0 - dev)
    return {
        "disentanglement": disent,
        "completeness": complete,
        "informativeness": r2(xtr, ytr),
        "informativeness_holdout": r2(xte, yte) if len(xte) else r2(xtr, ytr),
        "modularity": float(np.mean(mods)),
        "dropped_attributes": dropped,
        "importance": imp,
    }


# -- brute-force oracles (kept separate so tests can diff against them) ---------------


def miou_pacc_bruteforce(pred: np.ndarray, gt: np.ndarray):
    """Literal per-class loops; the oracle twin of miou_pacc."""
    match = 0
    for p, g in zip(pred.ravel(), gt.ravel()):
        match += int(p == g)
    pacc = match / pred.size
    classes = sorted(set(pred.ravel().tolist()) | set(gt.ravel().tolist()))
    ious, ws = [], []
    for c in classes:
        inter = sum(1 for p, g in zip(pred.ravel(), gt.ravel()) if p == c and g == c)
        union = sum(1 for p, g in zip(pred.ravel(), gt.ravel()) if p == c or g == c)
        if union == 0:
            continue
        ious.append(inter / union)
        ws.append(sum(1 for g in gt.ravel() if g == c))
    if sum(ws) == 0:
        ws = [1.0] * len(ious)
    return sum(i * w for i, w in zip(ious, ws)) / sum(ws), pacc


def ari_bruteforce(a: np.ndarray, b: np.ndarray) -> float:
    """Contingency formula computed with explicit loops."""
    a = a.ravel().tolist()
    b = b.ravel().tolist()
    n = len(a)
    la = sorted(set(a))
    lb = sorted(set(b))
    table = [[0] * len(lb) for _ in la]
    for x, y in zip(a, b):
        table[la.index(x)][lb.index(y)] += 1

    def c2(x):
        return x * (x - 1) / 2.0

    sum_ij = sum(c2(v) for row in table for v in row)
    sum_a = sum(c2(sum(row)) for row in table)
    sum_b = sum(c2(sum(table[i][j] for i in range(len(la)))) for j in range(len(lb)))
    total = c2(n)
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)
