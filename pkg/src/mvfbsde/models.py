"""Benchmark models: systemic risk (mean and quantile interaction) and growth.

The systemic-risk model has a closed form, used throughout as an oracle.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ConfigurationError
from .scores import mean_score, quantile_score
from .state import ClampCounter, ModelSpec, SolverState
from .stochastics import NoisePair, PathBatch, TimeGrid


@dataclass(frozen=True)
class SystemicRiskParams:
    a: float = 1.0
    q: float = 1.0
    c: float = 1.0
    sigma: float = 1.0
    epsilon: float = 10.0
    rho: float = 0.3
    T: float = 1.0
    xi_mean: float = 0.0
    xi_var: float = 4.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigurationError("rho must lie in [-1, 1]")
        if (self.a + self.q) ** 2 + (self.epsilon - self.q**2) < 0:
            raise ConfigurationError("Riccati roots are complex for these parameters")


@dataclass(frozen=True)
class GrowthModelParams:
    C: float = 1.5
    depreciation: float = 0.1
    sigma: float = 0.1
    rho: float = 0.3
    T: float = 1.0
    k0_mean: float = 0.5
    k0_sd: float = 0.5

    def __post_init__(self):
        if not self.C > 0:
            raise ConfigurationError("C must be positive")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigurationError("rho must lie in [-1, 1]")


# ---------------------------------------------------------------- Riccati ---


def delta_pm(p: SystemicRiskParams) -> tuple[float, float]:
    """Roots of eta^2 + 2(a+q) eta - (eps - q^2)."""
    disc = (p.a + p.q) ** 2 + (p.epsilon - p.q**2)
    if disc < 0:
        raise ConfigurationError("negative discriminant")
    root = np.sqrt(disc)
    return -(p.a + p.q) + root, -(p.a + p.q) - root


def eta(t, p: SystemicRiskParams, printed: bool = False):
    """Solution of eta' = 2(a+q) eta + eta^2 - (eps - q^2) with eta(T) = c.

    ``printed=True`` evaluates the variant with "- 2" in the numerator, which
    does not satisfy the terminal condition; kept for comparison only.
    """
    dp, dm = delta_pm(p)
    e = np.exp((dp - dm) * (p.T - np.asarray(t, dtype=np.float64)))
    k = p.epsilon - p.q**2
    shift = 2.0 if printed else 1.0
    num = -k * (e - shift) - p.c * (dp * e - dm)
    den = (dm * e - dp) - p.c * (e - 1.0)
    return num / den


def riccati_rhs(eta_value, p: SystemicRiskParams):
    return 2 * (p.a + p.q) * eta_value + eta_value**2 - (p.epsilon - p.q**2)


def theta_integral(grid: TimeGrid, p: SystemicRiskParams) -> np.ndarray:
    """Theta(t_j) = int_0^t_j (a + q + eta) by the trapezoidal rule."""
    theta = p.a + p.q + eta(grid.times, p)
    inc = 0.5 * (theta[1:] + theta[:-1]) * grid.dt
    return np.concatenate([[0.0], np.cumsum(inc)])


def z_candidates(grid: TimeGrid, p: SystemicRiskParams) -> dict[str, np.ndarray]:
    """The two closed-form candidates for Z on the grid.

    ``sigma_eta`` is sigma*eta(t); ``sigma_idio_eta`` is sigma*sqrt(1-rho^2)*eta(t),
    the value obtained from sigma(t,x)^T d_x U with the idiosyncratic loading.
    """
    e = eta(grid.times, p)
    return {
        "sigma_eta": p.sigma * e,
        "sigma_idio_eta": p.sigma * np.sqrt(1 - p.rho**2) * e,
    }


def analytic_solution(
    p: SystemicRiskParams, xi: np.ndarray, noise: NoisePair, grid: TimeGrid
) -> SolverState:
    """Closed-form (X, Y, Z, Z0, S) on the given noise.

    Stochastic integrals use the left-point rule on the grid; the drift
    integral weights S_i by the exact increment of e^Theta over each step,
    so a constant mean field is reproduced exactly. Z is the
    idiosyncratic-loading candidate (see :func:`z_candidates`).
    """
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    M = xi.shape[0]
    e = eta(grid.times, p)
    theta = p.a + p.q + e
    Theta = theta_integral(grid, p)
    W, W0 = noise.W.values[..., 0], noise.W0.values[..., 0]
    S = p.xi_mean + p.rho * p.sigma * W0
    dB = p.rho * np.diff(W0, axis=1) + np.sqrt(1 - p.rho**2) * np.diff(W, axis=1)
    eTheta = np.exp(Theta)
    # int e^Theta theta S du with S frozen at the left point; d(e^Theta) = theta e^Theta du
    contrib = S[:, :-1] * np.diff(eTheta) + eTheta[:-1] * p.sigma * dB
    acc = np.concatenate([np.zeros((M, 1)), np.cumsum(contrib, axis=1)], axis=1)
    X = np.exp(-Theta) * (xi[:, None] + acc)
    Y = -e * (S - X)
    Z = np.broadcast_to(z_candidates(grid, p)["sigma_idio_eta"], (M, grid.N + 1)).copy()
    return SolverState(
        k=0,
        X=PathBatch("X", X),
        Y=PathBatch("Y", Y),
        Z=PathBatch("Z", Z),
        Z0=PathBatch("Z0", np.zeros((M, grid.N + 1))),
        S=PathBatch("S", S),
        grid=grid,
        noise=noise,
    )


# ---------------------------------------------------------- model specs ---


def _systemic_spec(p: SystemicRiskParams, name: str, score) -> ModelSpec:
    aq = p.a + p.q
    k = p.epsilon - p.q**2
    idio = p.sigma * np.sqrt(1 - p.rho**2)
    common = p.sigma * p.rho

    def drift(t, x, y, z, z0, s):
        return aq * (s - x) - y

    def driver(t, x, y, z, z0, s):
        return -(aq * y + k * (s - x))

    def sample_initial(rng, M):
        return rng.normal(p.xi_mean, np.sqrt(p.xi_var), size=(M, 1))

    return ModelSpec(
        name=name,
        params=asdict(p),
        drift=drift,
        sigma=lambda t, x: np.full_like(x, idio),
        sigma0=lambda t, x: np.full_like(x, common),
        driver=driver,
        terminal=lambda x, s: p.c * (x - s),
        score=score,
        sample_initial=sample_initial,
        T=p.T,
    )


def systemic_risk_model(p: SystemicRiskParams | None = None) -> ModelSpec:
    """Mean-interaction inter-bank lending model."""
    return _systemic_spec(p or SystemicRiskParams(), "systemic_risk", mean_score())


def quantile_interaction_model(
    p: SystemicRiskParams | None = None, alpha: float = 0.6
) -> ModelSpec:
    """Same coefficients, but S is the conditional alpha-quantile."""
    spec = _systemic_spec(p or SystemicRiskParams(), "quantile_interaction", quantile_score(alpha))
    spec.params = {**spec.params, "alpha": alpha}
    return spec


def optimal_consumption(y):
    return 1.0 / np.asarray(y, dtype=np.float64)


def growth_terminal_root(k0, g: float, T: float):
    """Negative root k_T of k_T^2 - k0 e^{gT} k_T - T = 0 (positive consumption)."""
    b = np.asarray(k0, dtype=np.float64) * np.exp(g * T)
    return 0.5 * (b - np.sqrt(b * b + 4 * T))


def growth_model(p: GrowthModelParams | None = None, clamp: float = 1e-3) -> ModelSpec:
    """Mean-field consumption-savings model with interest rate r = C * S."""
    p = p or GrowthModelParams()
    idio = p.sigma * np.sqrt(1 - p.rho**2)
    common = p.sigma * p.rho
    guard = ClampCounter(clamp)

    def drift(t, x, y, z, z0, s):
        return (p.C * s - p.depreciation) * x - 1.0 / guard(y)

    def driver(t, x, y, z, z0, s):
        return (p.C * s - p.depreciation) * y

    def sample_initial(rng, M):
        return rng.normal(p.k0_mean, p.k0_sd, size=(M, 1))

    def initial_guess(grid: TimeGrid, xi: np.ndarray) -> dict:
        # per-path deterministic solution with the rate frozen at its initial mean
        g = p.C * p.k0_mean - p.depreciation
        t = grid.times[None, :]
        k0 = xi.reshape(-1, 1)
        kT = growth_terminal_root(k0, g, grid.T)
        Y = -kT * np.exp(g * (grid.T - t))
        X = np.exp(g * t) * (k0 + t * np.exp(-g * grid.T) / kT)
        return {"X": X[..., None], "Y": Y[..., None]}

    return ModelSpec(
        name="growth",
        params=asdict(p),
        drift=drift,
        sigma=lambda t, x: np.full_like(x, idio),
        sigma0=lambda t, x: np.full_like(x, common),
        driver=driver,
        terminal=lambda x, s: -x,
        score=mean_score(),
        sample_initial=sample_initial,
        T=p.T,
        initial_guess=initial_guess,
        clamp=guard,
    )


def growth_noiseless_solution(p: GrowthModelParams, k0: float, grid: TimeGrid):
    """Deterministic limit (sigma -> 0, point-mass start): shoot on Y_0 > 0.

    With a point mass the mean equals the state, so r_t = C k_t and
    k' = (C k - delta) k - 1/y,  y' = -(C k - delta) y,  y_T = -k_T.
    Returns (k, y) on the grid.
    """

    def rhs(t, u):
        k, y = u
        g = p.C * k - p.depreciation
        return [g * k - 1.0 / y, -g * y]

    def miss(y0):
        sol = solve_ivp(rhs, (0.0, grid.T), [k0, y0], rtol=1e-11, atol=1e-12)
        if not sol.success:
            return np.nan
        k, y = sol.y[:, -1]
        return y + k

    g0 = p.C * k0 - p.depreciation
    guess = -growth_terminal_root(k0, g0, grid.T) * np.exp(g0 * grid.T)
    lo, hi = guess / 2, guess * 2
    while not (np.isfinite(miss(lo)) and np.isfinite(miss(hi)) and miss(lo) * miss(hi) < 0):
        lo, hi = lo / 1.5, hi * 1.5
        if hi > 1e6:
            raise ConfigurationError("shooting failed to bracket the initial costate")
    y0 = brentq(miss, lo, hi, xtol=1e-14)
    sol = solve_ivp(rhs, (0.0, grid.T), [k0, y0], t_eval=grid.times, rtol=1e-11, atol=1e-12)
    return sol.y[0], sol.y[1]


MODELS = {
    "systemic_risk": (SystemicRiskParams, systemic_risk_model),
    "quantile_interaction": (SystemicRiskParams, quantile_interaction_model),
    "growth": (GrowthModelParams, growth_model),
}


def build_model(name: str, params: dict | None = None) -> ModelSpec:
    """Model by registry name; ``alpha`` is routed to the quantile model."""
    if name not in MODELS:
        raise ConfigurationError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
    cls, factory = MODELS[name]
    params = dict(params or {})
    alpha = params.pop("alpha", None)
    try:
        p = cls(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {name}: {exc}") from None
    if name == "quantile_interaction":
        return factory(p, 0.6 if alpha is None else alpha)
    if alpha is not None:
        raise ConfigurationError(f"model {name} takes no alpha")
    return factory(p)


# -------------------------------------------------------------- MPC surface ---


@dataclass
class MpcSurface:
    K: np.ndarray
    r: np.ndarray
    t: float
    mpc: np.ndarray  # (len(K), len(r)), NaN where flagged
    Y: np.ndarray
    Z: np.ndarray
    flagged: np.ndarray  # |Y| below the clamp threshold

    def rows(self):
        for i, k in enumerate(self.K):
            for j, r in enumerate(self.r):
                yield float(k), float(r), float(self.t), float(self.mpc[i, j])

    def write_csv(self, path) -> None:
        from .files import write_rows_csv

        write_rows_csv(path, ("K", "r", "t", "mpc"), self.rows())


def _growth_field(U, p: GrowthModelParams, K, r, t):
    from .solvers import evaluate_decoupling

    KK, RR = np.meshgrid(np.asarray(K, float), np.asarray(r, float), indexing="ij")
    X = KK.reshape(-1, 1, 1)
    S = (RR / p.C).reshape(-1, 1, 1)  # r = C * S
    idio = p.sigma * np.sqrt(1 - p.rho**2)
    Y, Z = evaluate_decoupling(U, np.array([t], float), X, S, lambda t_, x: np.full_like(x, idio))
    return Y.reshape(KK.shape), Z.reshape(KK.shape), idio


def mpc_surface(U, p: GrowthModelParams, K, r, t: float, clamp: float = 1e-3) -> MpcSurface:
    """Marginal propensity to consume d c*/dK = -Z / (sigma_W Y^2) on a (K, r) grid.

    Z comes from the same loading sigma_W = sigma sqrt(1 - rho^2) it is
    divided by, so the result equals -d_K U / U^2. Points with |Y| below
    ``clamp`` are flagged and left as NaN.
    """
    U64 = U.cast(np.float64)
    Y, Z, idio = _growth_field(U64, p, K, r, t)
    flagged = np.abs(Y) < clamp
    with np.errstate(divide="ignore", invalid="ignore"):
        mpc = np.where(flagged, np.nan, -Z / (idio * Y * Y))
    return MpcSurface(np.asarray(K, float), np.asarray(r, float), float(t), mpc, Y, Z, flagged)


def population_grid(state, C: float, t: float, points: int = 20, coverage: float = 0.9):
    """(K, r) axes spanning the central ``coverage`` of the trained population at time t."""
    j = int(np.argmin(np.abs(state.grid.times - t)))
    lo, hi = (1 - coverage) / 2, (1 + coverage) / 2
    K = np.linspace(*np.quantile(state.X.values[:, j, 0], [lo, hi]), points)
    r = np.linspace(*np.quantile(C * state.S.values[:, j, 0], [lo, hi]), points)
    return K, r


def mpc_finite_difference(U, p: GrowthModelParams, K, r, t: float, h: float = 1e-3):
    """Central difference of c* = 1/U in K, for checking :func:`mpc_surface`."""
    from .solvers import evaluate_decoupling

    U64 = U.cast(np.float64)
    K = np.asarray(K, float)
    out = []
    for shift in (h, -h):
        KK, RR = np.meshgrid(K + shift, np.asarray(r, float), indexing="ij")
        Y = evaluate_decoupling(U64, np.array([t], float), KK.reshape(-1, 1, 1),
                                (RR / p.C).reshape(-1, 1, 1))
        out.append(1.0 / Y.reshape(KK.shape))
    return (out[0] - out[1]) / (2 * h)
