"""Endpoint error of Euler and midpoint sampling against an RK4 reference.

Prints a table and the error ratio per halving of the step size for a
Gaussian field and a two-component mixture.

    python3 scripts/convergence.py [--substeps 100000]
"""
import argparse

import numpy as np

from oave import AnalyticField, gaussian_noise, make_time_grid, reference_integrate, sample_trajectory

FIELDS = {
    "gaussian(0, 1)": AnalyticField.gaussian(0.0, 1.0),
    "gaussian(0.5, 0.3)": AnalyticField.gaussian(0.5, 0.3),
    "mixture": AnalyticField.mixture([(0.35, -0.3, 0.6), (0.65, 0.2, 0.8)]),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--substeps", type=int, default=10**5)
    ap.add_argument("--steps", type=int, nargs="+", default=[16, 32, 64, 128])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    z1 = gaussian_noise((1, 2, 2), args.seed)
    print(f"{'field':<20} {'solver':<9} {'N':>5} {'error':>12} {'ratio':>7}")
    for name, f in FIELDS.items():
        ref = reference_integrate(z1, 1.0, 0.0, f, args.substeps)
        for solver in ("euler", "midpoint"):
            prev = None
            for n in args.steps:
                err = float(np.linalg.norm(sample_trajectory(z1, make_time_grid(n), f, None, solver).values - ref.values))
                ratio = f"{prev / err:7.3f}" if prev else " " * 7
                print(f"{name:<20} {solver:<9} {n:>5} {err:12.4e} {ratio}")
                prev = err


if __name__ == "__main__":
    main()
