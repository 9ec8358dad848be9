"""Finite-difference oracles for verifying reverse-mode gradients.

Two flavors:
  * per-coordinate central differences, exact but O(size) forward passes;
    for small tensors and loss functions.
  * directional central differences along the gradient direction, one
    forward pair per direction; for composite blocks with many parameters.

Both evaluate the function on perturbed copies, so the oracle never reuses
the autodiff path it is checking.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, grad, no_grad


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _eval(f, arrays) -> float:
    with no_grad():
        return float(f([Tensor(arr) for arr in arrays]).data)


def numeric_grad(f, arrays, h: float = 1e-3) -> list[np.ndarray]:
    """Central-difference gradient of f w.r.t. every input array."""
    grads = []
    for i, arr in enumerate(arrays):
        g = np.zeros_like(arr, dtype=np.float64)
        flat = g.reshape(-1)
        for j in range(arr.size):
            bump = [a.copy() for a in arrays]
            bump[i].reshape(-1)[j] += h
            up = _eval(f, bump)
            bump[i].reshape(-1)[j] -= 2 * h
            down = _eval(f, bump)
            flat[j] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(f, arrays, h: float = 1e-3, tol: float = 1e-3) -> float:
    """Per-coordinate check; returns the worst aggregate relative error.

    The comparison is on gradient vectors as a whole (L2), which is the
    right scale for float32 forward evaluation.  An input whose aggregate
    misses at the base step is retried at the fallback steps (see
    check_block for the rationale).
    """
    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    loss = f(inputs)
    auto = grad(loss, inputs)
    ladder = (h,) + tuple(s for s in (2.5e-4, 4e-3) if s != h)
    worst = 0.0
    pending = list(range(len(arrays)))
    for step in ladder:
        if not pending:
            break
        numeric = numeric_grad(f, arrays, h=step)
        still = []
        for i in pending:
            ng = numeric[i]
            ag = auto[i]
            a = np.zeros_like(ng) if ag is None else ag.data.astype(np.float64)
            err = np.linalg.norm(ng - a) / max(np.linalg.norm(ng), np.linalg.norm(a), 1e-4)
            if err <= tol:
                worst = max(worst, err)
            else:
                still.append((i, err))
        pending = [i for i, _ in still]
        last_errs = dict(still)
    if pending:
        i = pending[0]
        raise AssertionError(
            f"gradient mismatch on input {i}: rel err {last_errs[i]:.3e} > {tol} "
            "at every step size")
    return worst


STEP_LADDER = (1e-3, 2.5e-4, 4e-3)


def check_block(forward, tensors: list, directions: int = 3, h: float = 1e-3,
                tol: float = 1e-3, seed: int = 0) -> float:
    """Directional FD check for a composite block.

    `forward` is a zero-argument closure producing a scalar Tensor from the
    live `tensors` (module parameters and/or inputs); FD evaluations perturb
    tensor .data in place and restore it.  Verifies FD(f, v) == <grad, v>
    along the gradient direction plus the largest-coordinate directions.

    Each direction is accepted if central differences match at the base step
    or at one of the fallback steps: float32 evaluation noise wants a large
    step, leaky-ReLU kinks and higher-order curvature want a small one, and
    a genuinely wrong gradient produces a scale-independent mismatch that
    fails the whole ladder.
    """
    loss = forward()
    auto = grad(loss, tensors)
    flat = np.concatenate(
        [np.zeros(t.data.size) if g is None else g.data.astype(np.float64).ravel()
         for t, g in zip(tensors, auto)]
    )
    gnorm = np.linalg.norm(flat)
    if gnorm == 0.0:
        raise AssertionError("autodiff gradient is identically zero; nothing to check")
    # the gradient direction plus unit vectors at the largest coordinates:
    # directions with enough projected signal for float32 central differences
    dirs = [flat / gnorm]
    top = np.argsort(np.abs(flat))[::-1][: max(directions - 1, 0)]
    for idx in top:
        v = np.zeros_like(flat)
        v[idx] = 1.0
        dirs.append(v)

    saved = [t.data.copy() for t in tensors]

    def eval_at(direction, step):
        # no no_grad here: the block may itself contain gradient computations
        offset = 0
        for t, base in zip(tensors, saved):
            dv = direction[offset : offset + base.size].reshape(base.shape)
            offset += base.size
            t.data = (base + step * dv).astype(np.float32)
        try:
            return float(forward().data)
        finally:
            for t, base in zip(tensors, saved):
                t.data = base

    ladder = (h,) + tuple(s for s in STEP_LADDER if s != h)
    worst, checked = 0.0, 0
    for v in dirs:
        predicted = float(flat @ v)
        if abs(predicted) < 2e-2 * gnorm:
            continue
        err = None
        for step in ladder:
            fd = (eval_at(v, step) - eval_at(v, -step)) / (2 * step)
            err = rel_err(fd, predicted, floor=1e-5 * max(gnorm, 1.0))
            if err <= tol:
                break
        worst = max(worst, err)
        checked += 1
        if err > tol:
            raise AssertionError(f"block directional mismatch: fd={fd:.6g} "
                                 f"auto={predicted:.6g} rel err {err:.3e} > {tol}")
    if checked == 0:
        raise AssertionError("no informative directions")
    return worst


def check_directional(f, arrays, directions: int = 3, h: float = 1e-3, tol: float = 1e-3,
                      seed: int = 0) -> float:
    """Directional check: FD of f along v vs. <grad, v>.

    Uses the normalized autodiff gradient as the first direction (maximal
    signal-to-noise for float32 central differences) plus random unit
    directions; directions with negligible projected derivative are skipped
    as numerically uninformative.
    """
    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    loss = f(inputs)
    auto = grad(loss, inputs)
    flat = np.concatenate(
        [np.zeros(a.size) if g is None else g.data.astype(np.float64).ravel()
         for a, g in zip(arrays, auto)]
    )
    gnorm = np.linalg.norm(flat)
    if gnorm == 0.0:
        raise AssertionError("autodiff gradient is identically zero; nothing to check")

    rng = np.random.default_rng(seed)
    dirs = [flat / gnorm]
    for _ in range(directions - 1):
        v = rng.standard_normal(flat.size)
        dirs.append(v / np.linalg.norm(v))

    worst = 0.0
    checked = 0
    for v in dirs:
        predicted = float(flat @ v)
        if abs(predicted) < 1e-3 * gnorm:
            continue  # too small relative to the gradient scale for f32 FD
        offset = 0
        bump_up, bump_dn = [], []
        for a in arrays:
            dv = v[offset : offset + a.size].reshape(a.shape).astype(np.float32)
            offset += a.size
            bump_up.append(a + h * dv)
            bump_dn.append(a - h * dv)
        fd = (_eval(f, bump_up) - _eval(f, bump_dn)) / (2 * h)
        err = rel_err(fd, predicted, floor=1e-5 * max(gnorm, 1.0))
        worst = max(worst, err)
        checked += 1
        if err > tol:
            raise AssertionError(f"directional derivative mismatch: fd={fd:.6g} "
                                 f"auto={predicted:.6g} rel err {err:.3e} > {tol}")
    if checked == 0:
        raise AssertionError("no informative directions; increase `directions`")
    return worst
