"""Inversion round trip: relative L2 between z0 and regenerate(invert(z0)).

Compares K fixed-point iterations per inversion step under both
regeneration solvers, over paired seeds.

    python3 scripts/roundtrip.py [--steps 32] [--seeds 20]
"""
import argparse

import numpy as np

from oave import AnalyticField
from oave.cli import roundtrip_errors
from oave.pipeline import paired_reduction


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=32)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--k-iters", type=int, nargs="+", default=[1, 2, 3, 5])
    ap.add_argument("--combine", choices=["average", "last"], default="last")
    ap.add_argument("--shape", type=int, nargs="+", default=[8, 16, 16])
    args = ap.parse_args()

    field = AnalyticField.mixture([(0.35, -0.3, 0.6), (0.65, 0.2, 0.8)])
    seeds = range(args.seeds)
    for solver in ("euler", "midpoint"):
        errs = {k: roundtrip_errors(field, args.steps, k, args.combine, seeds, tuple(args.shape), solver)
                for k in args.k_iters}
        base = errs[args.k_iters[0]]
        print(f"regeneration solver: {solver}")
        for k, e in errs.items():
            rep = paired_reduction(base, e)
            print(f"  K={k}: mean {np.mean(e):.5f}  median {np.median(e):.5f}  "
                  f"reduction vs K={args.k_iters[0]} {rep['mean_reduction']:+.1%}  wins {rep['wins']}/{rep['n']}")


if __name__ == "__main__":
    main()
