"""Error metrics against a reference, a nested Monte Carlo oracle, BSDE residuals."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .models import SystemicRiskParams, eta, riccati_rhs, z_candidates
from .scores import ScoreFunction
from .state import PROCESSES, ModelSpec, SolverState
from .stochastics import NoisePair, PathBatch, TimeGrid, brownian_from_increments, euler_maruyama

log = logging.getLogger(__name__)

BAND_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


# ---------------------------------------------------------------- metrics ---


@dataclass
class ProcessErrors:
    bias: np.ndarray  # per node
    rmse: np.ndarray
    r2: np.ndarray  # NaN where the reference is constant across paths
    global_bias: float
    global_rmse: float
    global_r2: float | None  # None when the pooled reference is degenerate
    bands: np.ndarray  # (len(BAND_LEVELS), nodes) quantiles of approx - ref

    def to_dict(self) -> dict:
        return {
            "bias": self.global_bias,
            "rmse": self.global_rmse,
            "r2": self.global_r2,
            "r2_defined": self.global_r2 is not None,
            "per_node": {
                "bias": self.bias.tolist(),
                "rmse": self.rmse.tolist(),
                "r2": [None if np.isnan(v) else float(v) for v in self.r2],
            },
        }


@dataclass
class ErrorReport:
    times: np.ndarray
    processes: dict[str, ProcessErrors] = field(default_factory=dict)

    def __getitem__(self, name: str) -> ProcessErrors:
        return self.processes[name]

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(),
                "processes": {k: v.to_dict() for k, v in self.processes.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def write_bands(self, path, process: str) -> None:
        """Plot-ready error quantile bands: t, q05, q25, q50, q75, q95."""
        from .files import write_rows_csv

        bands = self.processes[process].bands
        write_rows_csv(path, ("t", "q05", "q25", "q50", "q75", "q95"),
                       ([float(t), *map(float, bands[:, j])] for j, t in enumerate(self.times)))


def _degenerate(sst: float, ref: np.ndarray) -> bool:
    scale = float(np.sum(ref * ref))
    return sst <= 1e-24 * max(scale, 1.0)


def _errors(a: np.ndarray, b: np.ndarray) -> ProcessErrors:
    # a, b: (M, nodes, dim); the coordinate axis is pooled with the paths
    M, J, d = b.shape
    e = (a - b).transpose(1, 0, 2).reshape(J, M * d)
    ref = b.transpose(1, 0, 2).reshape(J, M * d)
    bias = e.mean(axis=1)
    rmse = np.sqrt((e * e).mean(axis=1))
    sse = (e * e).sum(axis=1)
    dev = ref - ref.mean(axis=1, keepdims=True)
    sst = (dev * dev).sum(axis=1)
    r2 = np.full(J, np.nan)
    for j in range(J):
        if not _degenerate(sst[j], ref[j]):
            r2[j] = 1.0 - sse[j] / sst[j]
    sst_all = float(((ref - ref.mean()) ** 2).sum())
    g_r2 = None if _degenerate(sst_all, ref) else 1.0 - float(sse.sum()) / sst_all
    return ProcessErrors(
        bias=bias,
        rmse=rmse,
        r2=r2,
        global_bias=float(e.mean()),
        global_rmse=float(np.sqrt((e * e).mean())),
        global_r2=g_r2,
        bands=np.quantile(e, BAND_LEVELS, axis=1),
    )


def compare_to_reference(approx: SolverState, reference: SolverState,
                         processes=PROCESSES) -> ErrorReport:
    """Bias, RMSE and R^2 per node and pooled over (paths x nodes)."""
    if approx.grid != reference.grid:
        raise ConfigurationError("approximation and reference live on different grids")
    report = ErrorReport(times=reference.grid.times.copy())
    for p in processes:
        a, b = getattr(approx, p).values, getattr(reference, p).values
        if a.shape != b.shape:
            raise ConfigurationError(f"{p}: shape mismatch {a.shape} vs {b.shape}")
        report.processes[p] = _errors(a, b)
    return report


def z_discrepancy(Z: np.ndarray, grid: TimeGrid, p: SystemicRiskParams) -> dict:
    """Which closed-form candidate the trained Z is closer to, in RMSE."""
    Z = np.asarray(Z)
    if Z.ndim == 3:
        Z = Z[..., 0]
    cands = z_candidates(grid, p)
    rmse = {k: float(np.sqrt(np.mean((Z - v[None, :]) ** 2))) for k, v in cands.items()}
    best = min(rmse, key=rmse.get)
    labels = {"sigma_eta": "sigma*eta(t)", "sigma_idio_eta": "sigma*sqrt(1-rho^2)*eta(t)"}
    gap = float(np.max(np.abs(cands["sigma_eta"] - cands["sigma_idio_eta"])))
    statement = (
        f"trained Z tracks {labels[best]} (RMSE {rmse[best]:.4g}) better than "
        f"{labels[min(set(rmse) - {best})]} (RMSE {rmse[min(set(rmse) - {best})]:.4g}); "
        f"the candidates differ by a factor {1 / np.sqrt(1 - p.rho ** 2):.4f}"
    )
    log.info(statement)
    return {"rmse": rmse, "closer": best, "max_candidate_gap": gap, "statement": statement}


def riccati_check(p: SystemicRiskParams, grid: TimeGrid, substeps: int = 20) -> dict:
    """Closed-form eta against backward RK4 from eta(T) = c, plus the printed variant.

    The printed variant is evaluated at T and its miss of the terminal
    condition is logged.
    """
    e = p.c
    h = -grid.dt / substeps
    rk4 = np.empty(grid.N + 1)
    rk4[-1] = e
    for j in range(grid.N, 0, -1):
        for _ in range(substeps):
            k1 = riccati_rhs(e, p)
            k2 = riccati_rhs(e + h / 2 * k1, p)
            k3 = riccati_rhs(e + h / 2 * k2, p)
            k4 = riccati_rhs(e + h * k3, p)
            e = e + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        rk4[j - 1] = e
    closed = eta(grid.times, p)
    printed_T = float(eta(p.T, p, printed=True))
    out = {
        "max_abs_error": float(np.max(np.abs(closed - rk4))),
        "eta_T": float(closed[-1]),
        "printed_eta_T": printed_T,
        "printed_terminal_gap": printed_T - p.c,
    }
    log.warning("printed eta variant gives eta(T) = %.6g instead of c = %.6g", printed_T, p.c)
    return out


# ---------------------------------------------------------- nested oracle ---


@dataclass
class OracleResult:
    times: np.ndarray
    values: np.ndarray  # (nodes, dim)
    stderr: np.ndarray | None  # for mean statistics only
    paths: np.ndarray  # (M_idio, nodes, dim)


def _statistic(X: np.ndarray, score: ScoreFunction):
    fx = score.target(X)
    if score.kind == "mean":
        return fx.mean(axis=0), fx.std(axis=0, ddof=1) / np.sqrt(X.shape[0])
    return np.quantile(fx, score.alpha, axis=0), None


def _shared_noise(w0: np.ndarray, grid: TimeGrid, M_idio: int, seed) -> NoisePair:
    w0 = np.asarray(w0, dtype=np.float64)
    if w0.shape[0] != grid.N + 1:
        raise ConfigurationError("common path length does not match the grid")
    w0 = w0.reshape(grid.N + 1, -1)
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((M_idio, grid.N, w0.shape[1])) * np.sqrt(grid.dt)
    W0 = np.broadcast_to(w0[None], (M_idio,) + w0.shape).copy()
    return NoisePair(PathBatch("W", brownian_from_increments(dW)), PathBatch("W0", W0), grid, seed)


def nested_conditional_oracle(
    model: ModelSpec,
    grid: TimeGrid,
    w0: np.ndarray,
    M_idio: int = 10_000,
    score: ScoreFunction | None = None,
    networks=None,
    analytic: SystemicRiskParams | None = None,
    seed=0,
    xi: np.ndarray | None = None,
) -> OracleResult:
    """Brute-force conditional statistic of X_t given one common path.

    Simulates ``M_idio`` copies sharing ``w0`` with independent idiosyncratic
    noise. With ``networks`` the copies follow the trained feedback maps;
    with ``analytic`` they follow the closed-form systemic-risk controls.
    """
    if (networks is None) == (analytic is None):
        raise ConfigurationError("pass exactly one of networks= or analytic=")
    score = score or model.score
    noise = _shared_noise(w0, grid, M_idio, seed)
    if xi is None:
        xi = model.sample_initial(np.random.default_rng([*np.atleast_1d(seed).astype(int), 7]), M_idio)
    xi = np.asarray(xi, dtype=np.float64).reshape(M_idio, -1)
    if networks is not None:
        from .orchestrator import sample_after_training

        X = sample_after_training(model, networks, noise, xi).X.values
    else:
        p = analytic
        e = eta(grid.times, p)
        S = p.xi_mean + p.rho * p.sigma * noise.W0.values[0, :, 0]
        zeros = np.zeros((M_idio, 1))

        def drift(j, x):
            y = -e[j] * (S[j] - x)
            return model.drift(grid.times[j], x, y, zeros, zeros, S[j])

        X = euler_maruyama(
            grid, xi, drift,
            lambda j, x: model.sigma(grid.times[j], x),
            lambda j, x: model.sigma0(grid.times[j], x),
            noise,
        ).values
    values, stderr = _statistic(X, score)
    return OracleResult(grid.times.copy(), values, stderr, X)


# ---------------------------------------------------------- BSDE residual ---


@dataclass
class ResidualReport:
    residuals: np.ndarray  # (M, N, dim)
    rms: float
    rms_dY: float

    @property
    def ratio(self) -> float:
        return self.rms / self.rms_dY if self.rms_dY > 0 else float("inf")


def bsde_residual(state: SolverState, model: ModelSpec, noise: NoisePair | None = None
                  ) -> ResidualReport:
    """r_j = dY_j + f_j dt - Z_j dW_j - Z0_j dW0_j per path and step."""
    noise = noise or state.noise
    if noise is None:
        raise ConfigurationError("bsde_residual needs the noise the state was built on")
    grid = state.grid
    X, Y, Z, Z0, S = (getattr(state, p).values for p in ("X", "Y", "Z", "Z0", "S"))
    t = grid.times[None, :-1, None]
    f = model.driver(t, X[:, :-1], Y[:, :-1], Z[:, :-1], Z0[:, :-1], S[:, :-1])
    dY = np.diff(Y, axis=1)
    r = dY + f * grid.dt - Z[:, :-1] * noise.dW - Z0[:, :-1] * noise.dW0
    return ResidualReport(r, float(np.sqrt(np.mean(r * r))), float(np.sqrt(np.mean(dY * dY))))


def residual_scaling(ratios: dict[int, float], T: float = 1.0) -> float:
    """Least-squares slope of log(ratio) against log(dt) over grid refinements."""
    if len(ratios) < 2:
        raise ConfigurationError("need at least two grid sizes")
    Ns = sorted(ratios)
    x = np.log([T / n for n in Ns])
    y = np.log([ratios[n] for n in Ns])
    return float(np.polyfit(x, y, 1)[0])
