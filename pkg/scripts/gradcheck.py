"""Coordinate-wise finite-difference check of all 894 parameter gradients.

    python scripts/gradcheck.py --size 16 --jitter 0.02 --seed 3
"""
import argparse
import time

import numpy as np

from usln import gradcheck
from usln.autodiff import Tape, Tensor, backward
from usln.losses import combined_loss
from usln.model import LAYOUT, bind, init_weights, usln_forward


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--jitter", type=float, default=0.02)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--step", type=float, default=1e-6)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    x = rng.uniform(0.05, 0.95, (3, args.size, args.size))
    y = rng.uniform(size=x.shape)
    w = init_weights(args.seed, args.jitter)

    def loss(params):
        return combined_loss(usln_forward(Tensor(x), params), Tensor(y)).total

    t0 = time.perf_counter()
    leaves = bind(w, Tape())
    g = backward(loss(leaves))
    base = {k: v.astype(np.float64) for k, v in w.items()}
    print(f"{'parameter':32s} {'size':>5s} {'rel. error':>11s}")
    worst = 0.0
    for name, shape in LAYOUT.items():
        numeric = np.zeros(shape)
        for idx in np.ndindex(shape):
            p = {k: v.copy() for k, v in base.items()}
            p[name][idx] += args.step
            up = loss(p).data.item()
            p[name][idx] -= 2 * args.step
            numeric[idx] = (up - loss(p).data.item()) / (2 * args.step)
        err = gradcheck.relative_error(g.of(leaves[name]), numeric)
        worst = max(worst, err)
        print(f"{name:32s} {numeric.size:5d} {err:11.2e}")
    print(f"worst {worst:.2e} over {sum(int(np.prod(s)) for s in LAYOUT.values())} parameters, "
          f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
