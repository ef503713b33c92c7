"""Growth model with common noise: train, then print the consumption policy.

Prints the marginal propensity to consume dc*/dK on a small (K, r) grid
and checks it against a finite difference of c* = 1/Y.

    python3 demos/growth_mpc.py [--quick] [--rho 0.3]
"""
import argparse

import numpy as np

from mvfbsde.models import GrowthModelParams, mpc_finite_difference, mpc_surface, population_grid
from mvfbsde.orchestrator import RunConfig, run
from mvfbsde.solvers import TrainingPlan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--rho", type=float, default=0.3)
    args = ap.parse_args()

    epochs = 100 if args.quick else 400
    plan = TrainingPlan(epochs_Y=epochs, epochs_S=epochs, epochs_Z0=epochs // 2)
    cfg = RunConfig(model="growth", model_params={"rho": args.rho}, N=26 if args.quick else 51,
                    M=1000 if args.quick else 2000, K=5 if args.quick else 10, seed=0, plan=plan)
    result = run(cfg, on_iteration=lambda s, n, r: print(
        f"  k={r['k']:2d}  dist Y {r['distances']['Y']:.2e}  clamped {r['clamped']}"))
    st = result.state
    print(f"terminal fit RMSE(Y_T + K_T) = {np.sqrt(np.mean((st.Y.values[:, -1] + st.X.values[:, -1])**2)):.4f}")
    print(f"mean |Z0| = {np.mean(np.abs(st.Z0.values)):.4f}")

    p = GrowthModelParams(rho=args.rho)
    for t in (0.5, 0.9):
        # the policy is only meaningful where the trained population lives
        K, r = population_grid(st, p.C, t, points=6)
        surf = mpc_surface(result.networks.U, p, K, r, t)
        fd = mpc_finite_difference(result.networks.U, p, K, r, t)
        print(f"\nMPC at t = {t}  (rows K, columns r = {np.round(r, 3).tolist()})")
        for i, k in enumerate(K):
            print(f"K={k:4.2f} " + " ".join(f"{v:8.4f}" for v in surf.mpc[i]))
        rel = np.nanmax(np.abs(surf.mpc - fd) / np.abs(fd))
        print(f"max relative gap to finite difference: {rel:.1e}")


if __name__ == "__main__":
    main()
