"""Central finite differences as an oracle for the hand-written backward pass."""

from __future__ import annotations

import numpy as np


def finite_diff_grad(loss_fn, params: dict, eps=1e-5, keys=None) -> dict:
    """Numeric gradient of ``loss_fn(params)`` by central differences.

    Each scalar is perturbed in place and restored, so ``params`` is unchanged
    on return. ``keys`` restricts the check to a subset of tensors.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    out = {}
    for k in keys or params:
        p = params[k]
        g = np.zeros_like(p, dtype=float)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn(params)
            flat[i] = old - eps
            down = loss_fn(params)
            flat[i] = old
            gflat[i] = (up - down) / (2.0 * eps)
        out[k] = g
    return out


def relative_error(analytic, numeric, floor=1e-8) -> np.ndarray:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def max_relative_error(analytic: dict, numeric: dict, floor=1e-8) -> tuple[float, str]:
    """Largest elementwise relative error over all shared tensors and its tensor name."""
    worst, where = 0.0, ""
    for k, n in numeric.items():
        e = float(relative_error(analytic[k], n, floor).max(initial=0.0))
        if e > worst:
            worst, where = e, k
    return worst, where
