"""Outer Picard loop with soft updates, and sampling from trained networks."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import solvers
from .errors import ConfigurationError, MVFBSDEError
from .models import build_model
from .nets import AdamState
from .solvers import Networks, TrainingPlan, common_features, evaluate_decoupling
from .state import ModelSpec, SolverState
from .stochastics import NoisePair, PathBatch, TimeGrid, l2_path_distance, sample_noise

log = logging.getLogger(__name__)

DAMPED = ("X", "Y", "Z", "Z0")


@dataclass
class RunConfig:
    model: str
    model_params: dict = field(default_factory=dict)
    T: float = 1.0
    N: int = 101
    M: int = 10_000
    seed: int = 0
    K: int = 20
    delta: float = 0.5
    tolerance: float = 1e-4
    plan: TrainingPlan = field(default_factory=TrainingPlan)
    output_dir: str | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ConfigurationError("loop.delta must lie in [0, 1)")
        if self.K < 1:
            raise ConfigurationError("loop.K must be at least 1")
        if self.N < 2:
            raise ConfigurationError("grid.N must be at least 2")
        if self.M < 1:
            raise ConfigurationError("sampling.M must be positive")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.N)

    def build_model(self) -> ModelSpec:
        return build_model(self.model, {**self.model_params, "T": self.T})


@dataclass
class ConvergenceReport:
    records: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    stopped_early: bool = False

    def distances(self, process: str) -> list[float]:
        return [r["distances"][process] for r in self.records]

    def to_dict(self) -> dict:
        # wall time is kept out so that fixed-seed reports are byte-identical
        return {"records": self.records, "stopped_early": self.stopped_early}


@dataclass
class RunResult:
    state: SolverState
    networks: Networks
    report: ConvergenceReport
    xi: np.ndarray
    model: ModelSpec
    config: RunConfig


def soft_update(prev: PathBatch, proposal: PathBatch, delta: float) -> PathBatch:
    """delta * prev + (1 - delta) * proposal."""
    if prev.shape != proposal.shape:
        raise ConfigurationError(f"shape mismatch {prev.shape} vs {proposal.shape}")
    if not 0.0 <= delta <= 1.0:
        raise ConfigurationError("delta must lie in [0, 1]")
    return PathBatch(proposal.name, delta * prev.values + (1.0 - delta) * proposal.values)


def initial_state(model: ModelSpec, grid: TimeGrid, xi: np.ndarray, noise) -> SolverState:
    """X frozen at xi, everything else zero, unless the model offers a guess."""
    M, dim = xi.shape
    shape = (M, grid.N + 1, dim)
    vals = {
        "X": np.broadcast_to(xi[:, None, :], shape).copy(),
        "Y": np.zeros(shape), "Z": np.zeros(shape), "Z0": np.zeros(shape), "S": np.zeros(shape),
    }
    if model.initial_guess is not None:
        vals.update(model.initial_guess(grid, xi))
    return SolverState(0, *(PathBatch(p, vals[p]) for p in ("X", "Y", "Z", "Z0", "S")),
                       grid=grid, noise=noise)


def draw_initial(model: ModelSpec, M: int, seed) -> np.ndarray:
    """Initial states from the model's law, on a stream separate from the noise."""
    return model.sample_initial(np.random.default_rng([int(seed), 1]), M)


def _fresh(networks: Networks, dim, seed, k, plan: TrainingPlan, activation):
    rng = np.random.default_rng([int(seed), 3, k])
    nets = Networks.create(dim, rng, plan.dtype, activation)
    nets.opt = {name: plan.adam() for name, _ in nets.items()}
    return nets


def run(
    config: RunConfig,
    initial: SolverState | None = None,
    networks: Networks | None = None,
    noise: NoisePair | None = None,
    xi: np.ndarray | None = None,
    on_iteration=None,
) -> RunResult:
    """Outer loop: forward Picard, S fit, Y/Z fit, Z0 fit, with damping.

    X is damped before S is fitted, so every later stage sees the damped
    paths. S itself is replaced, not damped.
    """
    grid = config.grid
    model = config.build_model()
    plan = config.plan
    if noise is None:
        noise = sample_noise(grid, config.M, 1, config.seed)
    if xi is None:
        xi = draw_initial(model, config.M, config.seed)
    xi = np.asarray(xi, dtype=np.float64).reshape(config.M, -1)
    dim = xi.shape[1]
    state = initial if initial is not None else initial_state(model, grid, xi, noise)
    nets = networks or _fresh(None, dim, config.seed, 0, plan, "tanh")
    if not nets.opt:
        nets.opt = {name: plan.adam() for name, _ in nets.items()}
    report = ConvergenceReport()

    for k in range(config.K):
        tic = time.perf_counter()
        if not plan.warm_start and k > 0:
            nets = _fresh(nets, dim, config.seed, k, plan, nets.U.activation)
        rng = np.random.default_rng([int(config.seed), 2, k])
        if model.clamp is not None:
            model.clamp.reset()
        try:
            X_hat, picard_errors = solvers.picard_forward(
                model, state, noise, xi, plan.picard_tol, plan.picard_max_inner
            )
            X = soft_update(state.X, X_hat, config.delta)
            S, diag_S = solvers.fit_mean_field(
                model.score, X, noise, plan, nets.S, nets.opt["S"], rng
            )
            Y_hat, Z_hat, diag_Y = solvers.fit_backward_Y(
                model, X, S, state, plan, nets.U, nets.opt["U"], rng
            )
            Y = soft_update(state.Y, Y_hat, config.delta)
            Z = soft_update(state.Z, Z_hat, config.delta)
            Z0_hat, diag_Z0 = solvers.fit_Z0(
                model, X, S, Y, Z, state.Z0, noise, plan, nets.V, nets.opt["V"], rng
            )
            Z0 = soft_update(state.Z0, Z0_hat, config.delta)
        except MVFBSDEError:
            log.exception("outer iteration %d failed", k + 1)
            if config.output_dir:
                from .files import write_report
                write_report(config.output_dir, report)
            raise
        new = SolverState(k + 1, X, Y, Z, Z0, S, grid=grid, noise=noise)
        dist = {p: l2_path_distance(getattr(new, p), getattr(state, p)) for p in DAMPED}
        record = {
            "k": k + 1,
            "distances": dist,
            "picard_errors": picard_errors,
            "clamped": 0 if model.clamp is None else model.clamp.reset(),
            **diag_S, **diag_Y, **diag_Z0,
        }
        report.records.append(record)
        report.wall_times.append(time.perf_counter() - tic)
        log.info("iteration %d: %s", k + 1, {p: f"{v:.3e}" for p, v in dist.items()})
        state = new
        if on_iteration is not None:
            on_iteration(state, nets, record)
        if config.output_dir and config.checkpoint_every and (k + 1) % config.checkpoint_every == 0:
            from .files import save_checkpoint
            save_checkpoint(
                f"{config.output_dir}/checkpoint_{k + 1:03d}.json", nets, _meta(config, model, k + 1)
            )
        if max(dist.values()) < config.tolerance:
            report.stopped_early = k + 1 < config.K
            break

    result = RunResult(state, nets, report, xi, model, config)
    if config.output_dir:
        from .files import write_run
        write_run(config.output_dir, result)
    return result


def _meta(config: RunConfig, model: ModelSpec, k: int) -> dict:
    from .files import config_to_dict
    return {
        "model": model.name,
        "params": model.params,
        "iteration": k,
        "seed": config.seed,
        "config": config_to_dict(config),
    }


def closed_loop_drift(model: ModelSpec, nets: Networks, grid: TimeGrid, S: np.ndarray,
                      V_hidden: np.ndarray):
    """Drift callback using the trained feedback maps (for Euler stepping)."""
    head_w = nets.V.head_w.value.astype(np.float64)
    head_b = nets.V.head_b.value.astype(np.float64)

    def drift(j: int, x: np.ndarray):
        t = grid.times[j]
        y, z = evaluate_decoupling(
            nets.U, grid.times[j:j + 1], x[:, None], S[:, j:j + 1], model.sigma
        )
        z0 = np.concatenate([V_hidden[:, j], x], axis=1) @ head_w + head_b
        return model.drift(t, x, y[:, 0], z[:, 0], z0, S[:, j])

    return drift


def sample_after_training(
    model: ModelSpec, nets: Networks, noise: NoisePair, xi: np.ndarray
) -> SolverState:
    """Simulate X forward with Y = U(t,X,S), Z = sigma d_x U, Z0 = v, S = S_theta."""
    from .stochastics import euler_maruyama

    grid = noise.grid
    feats = common_features(noise.W0.values, grid).astype(nets.S.dtype)
    S = nets.S(feats).astype(np.float64)
    V_hidden = nets.V.hidden_states(feats.astype(nets.V.dtype)).value.astype(np.float64)
    drift = closed_loop_drift(model, nets, grid, S, V_hidden)
    xi = np.asarray(xi, dtype=np.float64).reshape(noise.M, -1)
    X = euler_maruyama(
        grid, xi, drift,
        lambda j, x: model.sigma(grid.times[j], x),
        lambda j, x: model.sigma0(grid.times[j], x),
        noise,
    )
    Y, Z = evaluate_decoupling(nets.U, grid.times, X.values, S, model.sigma)
    Z0 = nets.V(feats.astype(nets.V.dtype), X.values.astype(nets.V.dtype)).astype(np.float64)
    return SolverState(
        k=-1, X=X, Y=PathBatch("Y", Y), Z=PathBatch("Z", Z), Z0=PathBatch("Z0", Z0),
        S=PathBatch("S", S), grid=grid, noise=noise,
    )
