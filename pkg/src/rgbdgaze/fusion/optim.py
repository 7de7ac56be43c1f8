"""Adam and a small training loop for toy-scale fusion models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyDataset
from .model import (HyperParams, fusion_backward, fusion_forward, init_fusion_params,
                    init_mlp_params, mlp_backward, mlp_substitute_forward, mse_loss)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, 0)


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``.

    Inputs are left untouched. Parameters without a gradient entry are copied.
    """
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads.get(k)
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        if g is None:
            new_p[k], new_m[k], new_v[k] = p.copy(), m, v
            continue
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    lr_step: int = 0          # epochs between decays; 0 disables the schedule
    lr_gamma: float = 0.1
    model: str = "transformer"  # or "mlp"
    train_mode: bool = False  # enable dropout while fitting


@dataclass
class FitResult:
    params: dict
    trace: list               # per-epoch average training MSE
    final_mse: float          # full-dataset MSE in inference mode


def fit_toy(tokens, targets, hp: HyperParams, config: FitConfig = FitConfig(),
            params=None) -> FitResult:
    """Minimize MSE with Adam over shuffled minibatches.

    ``tokens`` is ``(N, n_features, d_model)``, ``targets`` ``(N, 2)``.
    """
    X = np.asarray(tokens, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 3 or len(X) == 0:
        raise EmptyDataset("fit_toy needs at least one sample")
    if len(Y) != len(X):
        raise ValueError("tokens and targets differ in length")
    rng = np.random.default_rng(config.seed)
    mlp = config.model == "mlp"
    if params is None:
        params = (init_mlp_params if mlp else init_fusion_params)(hp, seed=config.seed)
    backward = mlp_backward if mlp else fusion_backward
    forward = mlp_substitute_forward if mlp else fusion_forward
    mode = "train" if config.train_mode else "eval"
    state = AdamState.zeros_like(params)
    trace = []
    n = len(X)
    bs = max(1, min(config.batch_size, n))
    for epoch in range(config.epochs):
        lr = config.lr
        if config.lr_step:
            lr *= config.lr_gamma ** (epoch // config.lr_step)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = backward(X[idx], Y[idx], params, hp, mode=mode, rng=rng)
            params, state = adam_step(params, grads, state, lr)
            total += loss * len(idx)
        trace.append(total / n)
    final = mse_loss(forward(X, params, hp), Y)
    return FitResult(params, trace, final)


def planted_linear_problem(n, hp: HyperParams, seed=0):
    """Tokens ``N(0, 1)`` and targets that are a fixed linear map of the flattened tokens."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, hp.n_features, hp.d_model))
    A = rng.normal(scale=0.02, size=(hp.n_features * hp.d_model, 2))
    return X, X.reshape(n, -1) @ A


def write_trace_csv(trace, path) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])
