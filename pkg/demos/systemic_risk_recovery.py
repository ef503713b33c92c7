"""Train the solver on the systemic-risk model and compare with the closed form.

    python3 demos/systemic_risk_recovery.py            # desk scale, ~10 min
    python3 demos/systemic_risk_recovery.py --quick    # smaller, rougher run, under a minute
"""
import argparse

import numpy as np

from mvfbsde.models import SystemicRiskParams, analytic_solution
from mvfbsde.orchestrator import RunConfig, run
from mvfbsde.solvers import TrainingPlan
from mvfbsde.validation import compare_to_reference, riccati_check, z_discrepancy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    epochs = 100 if args.quick else 400
    plan = TrainingPlan(epochs_Y=epochs, epochs_S=epochs, epochs_Z0=epochs // 2)
    cfg = RunConfig(model="systemic_risk", N=26 if args.quick else 51, M=1000 if args.quick else 2000,
                    K=5 if args.quick else 10, seed=args.seed, plan=plan)

    p = SystemicRiskParams()
    check = riccati_check(p, cfg.grid)
    print(f"Riccati closed form vs RK4: max error {check['max_abs_error']:.1e}")

    def progress(state, nets, rec):
        d = rec["distances"]
        print(f"  k={rec['k']:2d}  dist X {d['X']:.2e}  Y {d['Y']:.2e}  Z0 {d['Z0']:.2e}")

    result = run(cfg, on_iteration=progress)
    st = result.state
    ref = analytic_solution(p, result.xi, st.noise, st.grid)
    rep = compare_to_reference(st, ref)
    print("\nprocess      R2      RMSE     bias")
    for name in ("X", "Y", "Z", "S"):
        e = rep[name]
        print(f"{name:>7} {e.global_r2:8.4f} {e.global_rmse:8.4f} {e.global_bias:+8.4f}")
    print(f"mean |Z0| = {np.mean(np.abs(st.Z0.values)):.4f} (closed form: 0)")
    print(z_discrepancy(st.Z.values, st.grid, p)["statement"])


if __name__ == "__main__":
    main()
