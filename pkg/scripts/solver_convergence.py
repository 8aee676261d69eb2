"""Strong self-convergence of the Euler scheme under grid refinement.

Drivers are sampled once on the finest grid and sub-sampled, so every level
sees the same fBm path.

    python scripts/solver_convergence.py --hurst 0.75 --paths 200
"""
import argparse

import numpy as np

from sddelab import fbm
from sddelab.report import write_csv
from sddelab.sdde import make_model, solve


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--hurst", type=float, default=0.75)
    ap.add_argument("--sigma", default="1 + 0.25*tanh(x)")
    ap.add_argument("--b", default="0.1*sin(x)")
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="convergence.csv")
    args = ap.parse_args()
    levels = [32, 64, 128, 256, 512]
    finest = levels[-1]
    B = fbm.sample(fbm.Grid.uniform(2.0, 2 * finest), args.hurst, args.paths, args.seed).paths
    finals = {}
    for n in levels:
        model = make_model(args.hurst, 2.0, 1.0, args.sigma, args.b, steps_per_delay=n,
                           scan_points=2001)
        finals[n] = solve(model, B[:, ::finest // n]).values[:, -1]
    rows = []
    for a, b in zip(levels[:-1], levels[1:]):
        err = float(np.mean(np.abs(finals[a] - finals[b])))
        rows.append((a, err))
    for (n, e), (_, e2) in zip(rows[:-1], rows[1:]):
        print(f"n={n:4d}  E|X_n - X_2n| = {e:.3e}  observed order {np.log2(e / e2):.3f}")
    print(f"reference order min(2H-1, 1) = {min(2 * args.hurst - 1, 1):.3f}")
    write_csv(args.out, ["steps_per_delay", "mean_abs_diff"], rows)


if __name__ == "__main__":
    main()
