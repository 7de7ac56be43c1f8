"""Finite-difference gradient check for each encoder variant across model sizes."""

import argparse
import csv
import time

import numpy as np

from rgbdgaze.fusion import (HyperParams, finite_diff_grad, fusion_backward, init_fusion_params,
                             init_mlp_params, max_relative_error, mlp_backward)


def check(variant, d_model, n_layers, eps, seed=0):
    hp = HyperParams(d_model=d_model, d_ff=2 * d_model, n_heads=2, n_layers=n_layers,
                     n_tokens=5, variant="B2T" if variant == "MLP" else variant)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(3, hp.n_features, d_model))
    Y = rng.normal(scale=0.3, size=(3, 2))
    if variant == "MLP":
        params, back = init_mlp_params(hp, seed), mlp_backward
    else:
        params, back = init_fusion_params(hp, seed), fusion_backward
    _, grads = back(X, Y, params, hp)
    num = finite_diff_grad(lambda p: back(X, Y, p, hp)[0], params, eps)
    return max_relative_error(grads, num)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d-model", type=int, nargs="+", default=[8, 16])
    ap.add_argument("--layers", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-4, 1e-5, 1e-6])
    ap.add_argument("-o", "--output", default="gradcheck.csv")
    args = ap.parse_args()
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "d_model", "layers", "eps", "max_rel_error", "worst_tensor", "seconds"])
        for v in ("PreLN", "PostLN", "B2T", "MLP"):
            for d in args.d_model:
                for nl in args.layers:
                    for eps in args.eps:
                        t0 = time.perf_counter()
                        err, where = check(v, d, nl, eps)
                        dt = time.perf_counter() - t0
                        w.writerow([v, d, nl, eps, err, where, round(dt, 3)])
                        print(f"{v:6s} d={d:2d} l={nl} eps={eps:.0e}: {err:.2e} ({where})")


if __name__ == "__main__":
    main()
