"""Step response and noise suppression of the temporal filters.

A 2D step of height 1 at t = 20. Settling time (samples to stay within 5 %) is
measured on the clean step; the residual standard deviation on a noisy copy.
"""

import argparse

import numpy as np

from rgbdgaze.filtering import make_filter


def settle_time(out, start, tol=0.05):
    err = np.abs(out[start:, 0] - 1.0)
    outside = np.nonzero(err > tol)[0]
    return 0 if len(outside) == 0 else int(outside[-1] + 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise", type=float, default=0.02)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    z = np.zeros((200, 2))
    z[20:] = 1.0
    noisy = z + rng.normal(scale=args.noise, size=z.shape)
    configs = [("none", {}), ("avg3", {})] + [
        ("kalman", {"q": q, "r": r}) for q in (1e-3, 1e-1, 1.0) for r in (1e-4, 1e-2)]
    print(f"{'filter':24s} {'settle':>7s} {'residual std':>13s}")
    for kind, kw in configs:
        rows = []
        for signal in (z, noisy):
            f = make_filter(kind, **kw)
            rows.append(np.array([f.step(s) for s in signal]))
        label = kind + (f" q={kw['q']:g} r={kw['r']:g}" if kw else "")
        resid = float(np.std(rows[1][100:, 0] - 1.0))
        print(f"{label:24s} {settle_time(rows[0], 20):7d} {resid:13.4f}")


if __name__ == "__main__":
    main()
