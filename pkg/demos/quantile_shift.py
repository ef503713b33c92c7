"""Mean versus 0.6-quantile interaction on the same common noise.

The quantile-interacting population is pulled towards an upper quantile,
so its average state sits above the mean-interacting one.

    python3 demos/quantile_shift.py [--quick]
"""
import argparse

import numpy as np

from mvfbsde.orchestrator import RunConfig, run
from mvfbsde.solvers import TrainingPlan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--alpha", type=float, default=0.6)
    args = ap.parse_args()

    epochs = 100 if args.quick else 400
    plan = TrainingPlan(epochs_Y=epochs, epochs_S=epochs, epochs_Z0=epochs // 2)
    base = dict(N=26 if args.quick else 51, M=1000 if args.quick else 2000,
                K=5 if args.quick else 10, seed=0, plan=plan)
    runs = {
        "mean": run(RunConfig(model="systemic_risk", **base)),
        f"q{args.alpha:g}": run(RunConfig(model="quantile_interaction",
                                          model_params={"alpha": args.alpha}, **base)),
    }
    t = runs["mean"].state.grid.times
    print(f"{'t':>5}" + "".join(f"{name:>12}" for name in runs) + "   (population mean of X)")
    for j in range(0, len(t), max(1, len(t) // 10)):
        print(f"{t[j]:5.2f}" + "".join(f"{r.state.X.values[:, j].mean():12.4f}" for r in runs.values()))
    for name, r in runs.items():
        print(f"{name}: time-averaged S {np.mean(r.state.S.values):+.4f}")


if __name__ == "__main__":
    main()
