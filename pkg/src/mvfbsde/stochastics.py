"""Time grids, Brownian noise, path storage and an Euler-Maruyama stepper."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, SimulationError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_j = j * T / N, j = 0..N."""

    T: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError("grid needs at least one step")
        if not self.T > 0:
            raise ConfigurationError("horizon T must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt

    def __len__(self) -> int:
        return self.N + 1


@dataclass
class PathBatch:
    """Sample paths of one process, values shaped (paths, nodes, dim)."""

    name: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[:, :, None]
        if self.values.ndim != 3:
            raise ConfigurationError(
                f"{self.name}: path values must be (paths, nodes[, dim])"
            )

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def copy(self, name: str | None = None) -> "PathBatch":
        return PathBatch(self.name if name is None else name, self.values.copy())

    @classmethod
    def zeros(cls, name: str, M: int, grid: TimeGrid, dim: int = 1) -> "PathBatch":
        return cls(name, np.zeros((M, grid.N + 1, dim)))


@dataclass
class NoisePair:
    """Idiosyncratic W and common W0 Brownian paths on a shared grid."""

    W: PathBatch
    W0: PathBatch
    grid: TimeGrid
    seed: int | None = None

    @property
    def dW(self) -> np.ndarray:
        return np.diff(self.W.values, axis=1)

    @property
    def dW0(self) -> np.ndarray:
        return np.diff(self.W0.values, axis=1)

    @property
    def M(self) -> int:
        return self.W.M

    def subset(self, idx) -> "NoisePair":
        return NoisePair(
            PathBatch("W", self.W.values[idx]),
            PathBatch("W0", self.W0.values[idx]),
            self.grid,
            self.seed,
        )


def brownian_from_increments(increments: np.ndarray) -> np.ndarray:
    """Cumulate (M, N, d) increments into (M, N+1, d) paths starting at 0."""
    M, _, d = increments.shape
    return np.concatenate([np.zeros((M, 1, d)), np.cumsum(increments, axis=1)], axis=1)


def sample_noise(grid: TimeGrid, M: int, d: int = 1, seed=None) -> NoisePair:
    """Independent Brownian motions W (idiosyncratic) and W0 (common).

    Each path draws from its own child stream of ``seed``, so path i is the
    same whatever M is and however the work is split.
    """
    if M < 1:
        raise ConfigurationError("need at least one path")
    root = np.random.SeedSequence(seed)
    children = root.spawn(M)
    sd = np.sqrt(grid.dt)
    inc = np.empty((2, M, grid.N, d))
    for i, child in enumerate(children):
        inc[:, i] = np.random.default_rng(child).standard_normal((2, grid.N, d)) * sd
    return NoisePair(
        PathBatch("W", brownian_from_increments(inc[0])),
        PathBatch("W0", brownian_from_increments(inc[1])),
        grid,
        seed,
    )


def euler_maruyama(
    grid: TimeGrid,
    x0: np.ndarray,
    drift: Callable[[int, np.ndarray], np.ndarray],
    diffusion: Callable[[int, np.ndarray], np.ndarray],
    common_diffusion: Callable[[int, np.ndarray], np.ndarray],
    noise: NoisePair,
    name: str = "X",
) -> PathBatch:
    """X_{j+1} = X_j + a dt + b dW_j + b0 dW0_j.

    Callbacks take the step index j and the current state (M, dim) and return
    arrays broadcastable to (M, dim) (scalar noise, d = 1).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim == 1:
        x0 = x0[:, None]
    if not np.all(np.isfinite(x0)):
        raise SimulationError("non-finite initial condition")
    dW, dW0 = noise.dW, noise.dW0
    out = np.empty((x0.shape[0], grid.N + 1, x0.shape[1]))
    out[:, 0] = x0
    x = x0
    dt = grid.dt
    for j in range(grid.N):
        x = (
            x
            + drift(j, x) * dt
            + diffusion(j, x) * dW[:, j]
            + common_diffusion(j, x) * dW0[:, j]
        )
        bad = ~np.isfinite(x)
        if bad.any():
            path = int(np.argwhere(bad)[0, 0])
            raise SimulationError(
                f"non-finite state on path {path} at step {j + 1}", path=path, step=j + 1
            )
        out[:, j + 1] = x
    return PathBatch(name, out)


def l2_path_distance(a: PathBatch | np.ndarray, b: PathBatch | np.ndarray) -> float:
    """Mean over paths and nodes of the squared Euclidean distance."""
    av = a.values if isinstance(a, PathBatch) else np.asarray(a)
    bv = b.values if isinstance(b, PathBatch) else np.asarray(b)
    if av.shape != bv.shape:
        raise ConfigurationError(f"shape mismatch {av.shape} vs {bv.shape}")
    if av.ndim == 2:
        return float(np.mean((av - bv) ** 2))
    return float(np.mean(np.sum((av - bv) ** 2, axis=-1)))
