"""Estimate an unknown SU(2) rotation from one or two channel uses.

The average-fidelity optimum for k parallel uses has the closed form
cos^2(pi / (k + 3)), which makes rotation estimation the standard benchmark
for the whole stack: discretize the Haar prior, run the seesaw, compare
against the formula, then extract a physical implementation of the solved
strategy and check it reproduces the same outcome statistics.

Takes a few minutes; pass --fast for a coarser grid.
"""

import argparse
import time

import numpy as np

from probeopt import (
    SeesawConfig,
    SeesawProblem,
    haar_prior_su2,
    kernel_by_name,
    parallel,
    realize_parallel,
    run_seesaw,
    su2_channel,
    with_channel,
)
from probeopt.analysis import analytic_su2_score
from probeopt.realization import outcome_probabilities


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true", help="coarser grid, fewer restarts")
    args = ap.parse_args()
    n_points = 500 if args.fast else 2000
    restarts = 1 if args.fast else 2

    kernel = kernel_by_name("fidelity_su2")
    model = su2_channel()

    for k in (1, 2):
        h = with_channel(haar_prior_su2(n_points, mode="grid"), model, k)
        cfg = SeesawConfig(
            n_restarts=restarts, max_iters=50, epsilon=1e-7, n_outcomes=16, seed=1
        )
        t0 = time.time()
        res = run_seesaw(SeesawProblem(parallel(k), h, kernel), cfg)
        target = analytic_su2_score(k)
        print(
            f"k={k}: seesaw score {res.score:.6f}  closed form {target:.6f}  "
            f"difference {res.score - target:+.2e}  ({time.time() - t0:.0f} s)"
        )

        # turn the abstract tester into probe state + POVM and replay it
        r = realize_parallel(res.testers)
        worst = 0.0
        for j in range(0, len(h), max(1, len(h) // 50)):
            chois = [model.choi(h.points[j])] * k
            worst = max(worst, np.abs(
                outcome_probabilities(res.testers, chois) - r.probabilities(chois)
            ).max())
        d = r.rho.mat.shape[0]
        print(
            f"      realized as a {d}x{d} probe state + {len(r.povm)}-outcome POVM; "
            f"worst probability mismatch {worst:.1e}"
        )


if __name__ == "__main__":
    main()
