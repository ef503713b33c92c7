"""The four sub-steps of one outer Picard iteration.

picard_forward   resimulate X with (Y, Z, Z0, S) frozen
fit_mean_field   elicit S_t = stat(X_t | common noise) with a GRU
fit_backward_Y   regress the backward target on U(t, X_t, S_t); Z from d_x U
fit_Z0           regress (dY/dt + f) dW0 on a GRU fed the common noise and X_t
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import SimulationError, TrainingError
from .nets import AdamState, FeedForwardNet, GruNet, adam_update
from .scores import ScoreFunction, weighted_mean
from .state import ModelSpec, SolverState
from .stochastics import NoisePair, PathBatch, TimeGrid, l2_path_distance

log = logging.getLogger(__name__)


@dataclass
class TrainingPlan:
    epochs_Y: int = 1000
    epochs_Z0: int = 500
    epochs_S: int = 1000
    batch_size: int = 2048
    terminal_weight: float | None = None  # None -> N / 2
    lr: float = 0.005
    decay: float = 0.9997
    decay_every: int = 5
    picard_tol: float = 1e-12
    picard_max_inner: int = 100
    warm_start: bool = True
    dtype: str = "float32"
    curve_every: int = 10

    def __post_init__(self):
        for name in ("epochs_Y", "epochs_Z0", "epochs_S", "batch_size", "decay_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def weights(self, grid: TimeGrid) -> np.ndarray:
        w = np.ones(grid.N + 1)
        w[-1] = grid.N / 2 if self.terminal_weight is None else self.terminal_weight
        return w

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, decay=self.decay, decay_every=self.decay_every)


@dataclass
class Networks:
    """U (decoupling field), S (mean-field statistic) and V (Z0) with their optimisers."""

    U: FeedForwardNet
    S: GruNet
    V: GruNet
    opt: dict = field(default_factory=dict)

    @classmethod
    def create(cls, state_dim: int, rng: np.random.Generator, dtype="float32",
               activation: str = "tanh") -> "Networks":
        d = np.dtype(dtype)
        return cls(
            U=FeedForwardNet(2 + state_dim, state_dim, (18, 18), activation, rng=rng, dtype=d),
            S=GruNet(2, 2, state_dim, rng=rng, dtype=d),
            V=GruNet(2, 2, state_dim, extra_dim=state_dim, rng=rng, dtype=d),
        )

    def items(self):
        return (("U", self.U), ("S", self.S), ("V", self.V))


# ------------------------------------------------------------- features ---


def common_features(W0: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Per-node GRU inputs (t_j, dW0_{j-1}), zero increment at j = 0."""
    W0 = np.asarray(W0)
    if W0.ndim == 2:
        W0 = W0[..., None]
    M = W0.shape[0]
    inc = np.concatenate([np.zeros((M, 1, W0.shape[2])), np.diff(W0, axis=1)], axis=1)
    t = np.broadcast_to(grid.times[None, :, None], (M, grid.N + 1, 1))
    return np.concatenate([t, inc], axis=2)


def decoupling_inputs(times: np.ndarray, X: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Stack (t, x, s) along the last axis, shape (M, nodes, 1 + 2 dim)."""
    t = np.broadcast_to(np.asarray(times)[None, :, None], X.shape[:2] + (1,))
    return np.concatenate([t, X, S], axis=2)


def evaluate_decoupling(U: FeedForwardNet, times, X, S, sigma=None):
    """Y = U(t, X, S) and, if ``sigma`` is given, Z = sigma(t, X) d_x U.

    X and S are (M, nodes, dim) on the time nodes ``times``.
    """
    inp = decoupling_inputs(times, X, S)
    M, J, F = inp.shape
    flat = inp.reshape(M * J, F)
    Y = U(flat).astype(np.float64).reshape(M, J, -1)
    if sigma is None:
        return Y
    jac = U.input_gradient(flat).astype(np.float64)  # (MJ, m, F)
    dim = X.shape[2]
    dUdx = jac[:, :, 1:1 + dim].reshape(M, J, -1, dim)
    t = np.asarray(times)[None, :, None]
    # scalar noise: Z = sigma(t, X) * d_x U, one entry per backward coordinate
    Z = (sigma(t, X)[:, :, None, :] * dUdx).sum(axis=-1)
    return Y, Z


# --------------------------------------------------------- forward step ---


def picard_forward(
    model: ModelSpec,
    state: SolverState,
    noise: NoisePair,
    xi: np.ndarray,
    tol: float = 1e-12,
    max_inner: int = 100,
) -> tuple[PathBatch, list[float]]:
    """Inner Picard sweeps on the forward SDE with (Y, Z, Z0, S) frozen.

    Each sweep evaluates the coefficients on the previous iterate and
    integrates them with the Euler-Maruyama increments of the given noise.
    Returns the last iterate and the sequence of squared L2 errors.
    """
    grid = state.grid
    dt = grid.dt
    t = grid.times[None, :-1, None]
    Y, Z, Z0, S = (b.values[:, :-1] for b in (state.Y, state.Z, state.Z0, state.S))
    dW, dW0 = noise.dW, noise.dW0
    x0 = np.asarray(xi, dtype=np.float64).reshape(state.M, 1, -1)
    Xn = state.X.values
    errors: list[float] = []
    rising = 0
    for _ in range(max_inner):
        left = Xn[:, :-1]
        inc = (
            model.drift(t, left, Y, Z, Z0, S) * dt
            + model.sigma(t, left) * dW
            + model.sigma0(t, left) * dW0
        )
        Xnew = np.concatenate([x0, x0 + np.cumsum(inc, axis=1)], axis=1)
        bad = ~np.isfinite(Xnew)
        if bad.any():
            path, step = (int(v) for v in np.argwhere(bad)[0, :2])
            raise SimulationError(
                f"non-finite forward state on path {path} at step {step}",
                path=path, step=step, history=errors,
            )
        err = l2_path_distance(Xnew, Xn)
        rising = rising + 1 if errors and err > errors[-1] else 0
        errors.append(err)
        Xn = Xnew
        if err < tol:
            break
        if rising >= 3:
            raise SimulationError("forward Picard iteration diverging", history=errors)
    return PathBatch("X", Xn), errors


# ------------------------------------------------------- training loops ---


def _train(net, params, opt: AdamState, epochs: int, batch_loss, rng, M, batch_size,
           curve_every: int, what: str) -> list[float]:
    curve = []
    for epoch in range(epochs):
        idx = rng.integers(0, M, size=batch_size)
        with Tape() as tape:
            loss = batch_loss(idx)
            lv = float(loss.value)
            if not np.isfinite(lv):
                raise TrainingError(f"{what}: non-finite loss at epoch {epoch}")
            grads = tape.gradient(loss, params)
        try:
            adam_update(params, grads, opt)
        except TrainingError as exc:
            raise TrainingError(f"{what}: {exc} at epoch {epoch}") from None
        if epoch % curve_every == 0 or epoch == epochs - 1:
            curve.append(lv)
    return curve


def _clip_nonfinite(a: np.ndarray) -> tuple[np.ndarray, int]:
    bad = ~np.isfinite(a)
    n = int(bad.sum())
    if n == 0:
        return a, 0
    finite = a[~bad]
    bound = float(np.abs(finite).max()) if finite.size else 0.0
    return np.nan_to_num(a, nan=0.0, posinf=bound, neginf=-bound), n


def fit_mean_field(
    score: ScoreFunction,
    X: PathBatch,
    noise: NoisePair,
    plan: TrainingPlan,
    net: GruNet,
    opt: AdamState,
    rng: np.random.Generator,
) -> tuple[PathBatch, dict]:
    """Train S_theta(t, W0 path) to minimise the score against X_t."""
    grid = noise.grid
    feats = common_features(noise.W0.values, grid).astype(net.dtype)
    Xv = X.values.astype(net.dtype)
    w = np.ones(grid.N + 1)
    if not net.normalized:
        net.fit_normalization(feats)

    def batch_loss(idx):
        s = net.forward(feats[idx])
        return weighted_mean(score.tensor_score(s, Xv[idx]), w)

    curve = _train(net, net.params, opt, plan.epochs_S, batch_loss, rng, X.M,
                   plan.batch_size, plan.curve_every, "fit_mean_field")
    S = net(feats).astype(np.float64)
    return PathBatch("S", S), {"loss_S": curve}


def backward_target(model: ModelSpec, grid: TimeGrid, X, S, Y, Z, Z0) -> np.ndarray:
    """G(X_T, S_T) + sum_{t <= u < T} f_u dt for every node t.

    The driver is integrated with the left-point rule, so the sum is empty
    at t = T and the target there is exactly the terminal condition.
    """
    t = grid.times[None, :, None]
    f = model.driver(t, X, Y, Z, Z0, S)
    inc = f[:, :-1] * grid.dt
    suffix = np.concatenate(
        [np.cumsum(inc[:, ::-1], axis=1)[:, ::-1], np.zeros_like(inc[:, :1])], axis=1
    )
    return model.terminal(X[:, -1:], S[:, -1:]) + suffix


def fit_backward_Y(
    model: ModelSpec,
    X: PathBatch,
    S: PathBatch,
    prev: SolverState,
    plan: TrainingPlan,
    net: FeedForwardNet,
    opt: AdamState,
    rng: np.random.Generator,
) -> tuple[PathBatch, PathBatch, dict]:
    """Fit U_theta(t, X_t, S_t) to the backward target; Z = sigma^T d_x U."""
    grid = prev.grid
    target = backward_target(
        model, grid, X.values, S.values, prev.Y.values, prev.Z.values, prev.Z0.values
    )
    target, clipped = _clip_nonfinite(target)
    inp = decoupling_inputs(grid.times, X.values, S.values).astype(net.dtype)
    tgt = target.astype(net.dtype)
    w = plan.weights(grid)
    M, J, F = inp.shape
    if not net.normalized:
        net.fit_normalization(inp)

    def batch_loss(idx):
        out = net.forward(inp[idx].reshape(-1, F))
        out = ad.reshape(out, (len(idx), J, -1))
        return weighted_mean(ad.square(ad.sub(out, tgt[idx])), w)

    curve = _train(net, net.params, opt, plan.epochs_Y, batch_loss, rng, M,
                   plan.batch_size, plan.curve_every, "fit_backward_Y")
    Y, Z = evaluate_decoupling(net, grid.times, X.values, S.values, model.sigma)
    return PathBatch("Y", Y), PathBatch("Z", Z), {"loss_Y": curve, "target_clipped": clipped}


def z0_target(model: ModelSpec, grid: TimeGrid, noise: NoisePair, X, S, Y, Z, Z0) -> np.ndarray:
    """(dY_j / dt + f_j) dW0_j for j = 0..N-1."""
    t = grid.times[None, :-1, None]
    f = model.driver(t, X[:, :-1], Y[:, :-1], Z[:, :-1], Z0[:, :-1], S[:, :-1])
    dY = np.diff(Y, axis=1)
    return (dY / grid.dt + f) * noise.dW0


def fit_Z0(
    model: ModelSpec,
    X: PathBatch,
    S: PathBatch,
    Y: PathBatch,
    Z: PathBatch,
    Z0_prev: PathBatch,
    noise: NoisePair,
    plan: TrainingPlan,
    net: GruNet,
    opt: AdamState,
    rng: np.random.Generator,
) -> tuple[PathBatch, dict]:
    """Regress the Z0 target on v_theta(t, X_t, W0 path) over t < T."""
    grid = noise.grid
    target = z0_target(model, grid, noise, X.values, S.values, Y.values, Z.values, Z0_prev.values)
    target, clipped = _clip_nonfinite(target)
    feats = common_features(noise.W0.values, grid).astype(net.dtype)
    Xv = X.values.astype(net.dtype)
    tgt = target.astype(net.dtype)
    N = grid.N
    w = np.ones(N)
    if not net.normalized:
        net.fit_normalization(feats)

    def batch_loss(idx):
        out = net.forward(feats[idx, :N], Xv[idx, :N])
        return weighted_mean(ad.square(ad.sub(out, tgt[idx])), w)

    curve = _train(net, net.params, opt, plan.epochs_Z0, batch_loss, rng, X.M,
                   plan.batch_size, plan.curve_every, "fit_Z0")
    # the last node is not trained on; the recurrent net is simply evaluated there
    Z0 = net(feats, Xv).astype(np.float64)
    return PathBatch("Z0", Z0), {"loss_Z0": curve, "target_clipped_Z0": clipped}
