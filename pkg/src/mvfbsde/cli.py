"""Command-line entry point: ``mvfbsde {solve,sample,validate,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import files
from .errors import MVFBSDEError

log = logging.getLogger("mvfbsde")


def _out_dir(arg: str | None, fallback) -> Path:
    out = arg or os.environ.get(files.OUTPUT_ENV) or fallback
    if out is None:
        raise MVFBSDEError(f"no output directory: pass --out or set {files.OUTPUT_ENV}")
    return Path(out)


def _load_run(checkpoint):
    """Networks, metadata and the RunConfig a checkpoint was trained with."""
    path = files.resolve_checkpoint(checkpoint)
    nets, meta = files.load_checkpoint(path)
    config = files.config_from_dict(meta["config"])
    return nets, meta, config


def cmd_solve(args) -> int:
    from .orchestrator import run

    config = files.load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.K is not None:
        config.K = args.K
    config.output_dir = str(_out_dir(args.out, config.output_dir))
    result = run(config)
    last = result.report.records[-1]
    print(f"completed {len(result.report.records)} outer iterations; "
          f"final distances {json.dumps(last['distances'])}")
    print(f"wrote {config.output_dir}")
    return 0


def cmd_sample(args) -> int:
    from .orchestrator import draw_initial, sample_after_training
    from .stochastics import sample_noise

    nets, meta, config = _load_run(args.checkpoint)
    model = config.build_model()
    M = args.paths or config.M
    noise = sample_noise(config.grid, M, 1, args.seed)
    xi = draw_initial(model, M, args.seed)
    state = sample_after_training(model, nets, noise, xi)
    out = _out_dir(args.out, files.resolve_checkpoint(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"sample_seed{args.seed}.csv"
    rows = files.write_paths_csv(target, state)
    print(f"wrote {rows} rows to {target}")
    return 0


def cmd_validate(args) -> int:
    from .models import SystemicRiskParams, analytic_solution
    from .orchestrator import draw_initial, sample_after_training
    from .stochastics import sample_noise
    from .validation import (compare_to_reference, nested_conditional_oracle, riccati_check,
                             z_discrepancy)

    path = files.resolve_checkpoint(args.checkpoint)
    nets, meta = files.load_checkpoint(path, model=args.model)
    config = files.config_from_dict(meta["config"])
    model = config.build_model()
    grid = config.grid
    out = _out_dir(args.out, path.parent)
    out.mkdir(parents=True, exist_ok=True)
    # the checkpoint carries the seed, so the training noise is rebuilt exactly
    noise = sample_noise(grid, config.M, 1, config.seed)
    xi = draw_initial(model, config.M, config.seed)
    approx = sample_after_training(model, nets, noise, xi)
    summary: dict = {"model": model.name}
    if model.name == "systemic_risk":
        p = SystemicRiskParams(**{k: v for k, v in model.params.items() if k != "alpha"})
        ref = analytic_solution(p, xi, noise, grid)
        report = compare_to_reference(approx, ref)
        files.write_json(out / "error_report.json", report.to_dict())
        for proc in report.processes:
            report.write_bands(out / f"error_bands_{proc}.csv", proc)
        summary["riccati"] = riccati_check(p, grid)
        summary["z_discrepancy"] = z_discrepancy(approx.Z.values, grid, p)
        summary["global"] = {k: v.to_dict() | {"per_node": None}
                             for k, v in report.processes.items()}
        print(summary["z_discrepancy"]["statement"])
    if args.nested:
        rng = np.random.default_rng([config.seed, 11])
        idx = rng.choice(config.M, size=args.nested, replace=False)
        dev = []
        for i in idx:
            oracle = nested_conditional_oracle(
                model, grid, noise.W0.values[i], args.m_idio, networks=nets, seed=[config.seed, 12, int(i)]
            )
            dev.append(float(np.max(np.abs(approx.S.values[i] - oracle.values))))
        summary["nested_oracle"] = {"paths": idx.tolist(), "max_abs_deviation": dev}
        print(f"nested oracle: max |S - oracle| over {args.nested} common paths = {max(dev):.4g}")
    files.write_json(out / "validation.json", summary)
    print(f"wrote {out / 'validation.json'}")
    return 0


def _mpc_axes(args, cols, C: float, t: float):
    """Explicit bounds win; otherwise span the central 90% of the trained population at t."""
    at = np.isclose(cols["t"], cols["t"][np.argmin(np.abs(cols["t"] - t))])
    K_lo, K_hi = np.quantile(cols["X"][at], [0.05, 0.95])
    r_lo, r_hi = np.quantile(C * cols["S"][at], [0.05, 0.95])
    K = np.linspace(args.k_min if args.k_min is not None else K_lo,
                    args.k_max if args.k_max is not None else K_hi, args.points)
    r = np.linspace(args.r_min if args.r_min is not None else r_lo,
                    args.r_max if args.r_max is not None else r_hi, args.points)
    return K, r


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    try:
        report = json.loads((run_dir / "report.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MVFBSDEError(f"cannot read {run_dir / 'report.json'}: {exc}") from None
    rows = []
    for rec in report["records"]:
        d = rec["distances"]
        rows.append([rec["k"], d["X"], d["Y"], d["Z"], d["Z0"],
                     rec["loss_S"][-1], rec["loss_Y"][-1], rec["loss_Z0"][-1], rec["clamped"]])
    files.write_rows_csv(
        run_dir / "convergence.csv",
        ("k", "dist_X", "dist_Y", "dist_Z", "dist_Z0", "loss_S", "loss_Y", "loss_Z0", "clamped"),
        rows,
    )
    print(f"{'k':>3} {'X':>10} {'Y':>10} {'Z':>10} {'Z0':>10}")
    for r in rows:
        print(f"{r[0]:>3} {r[1]:>10.3e} {r[2]:>10.3e} {r[3]:>10.3e} {r[4]:>10.3e}")
    if args.mpc is not None:
        from .models import GrowthModelParams, mpc_surface

        nets, meta, config = _load_run(run_dir)
        if config.model != "growth":
            raise MVFBSDEError("the MPC surface is defined for the growth model only")
        p = GrowthModelParams(**{**config.model_params, "T": config.T})
        cols = files.read_paths_csv(run_dir / "paths.csv")
        for t in args.mpc:
            K, r = _mpc_axes(args, cols, p.C, t)
            surface = mpc_surface(nets.U, p, K, r, t)
            surface.write_csv(run_dir / f"mpc_t{t:g}.csv")
    print(f"wrote {run_dir / 'convergence.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvfbsde", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="train the networks with the outer Picard loop")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--K", type=int, help="override loop.K")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sample", help="simulate fresh paths from a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--paths", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("validate", help="compare a checkpoint with the closed form / nested oracle")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--nested", type=int, default=0, help="number of common paths for the oracle")
    p.add_argument("--m-idio", type=int, default=10_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="regenerate tables from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--mpc", type=float, nargs="*", help="times at which to export the MPC surface")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--k-min", type=float)
    p.add_argument("--k-max", type=float)
    p.add_argument("--r-min", type=float)
    p.add_argument("--r-max", type=float)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MVFBSDEError, OSError, KeyError) as exc:
        print(f"mvfbsde {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
