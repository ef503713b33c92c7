"""Problem definition and solver state containers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .scores import ScoreFunction
from .stochastics import NoisePair, PathBatch, TimeGrid

PROCESSES = ("X", "Y", "Z", "Z0", "S")


class ClampCounter:
    """Keeps singular drivers finite by pushing |y| up to ``threshold``; counts hits."""

    def __init__(self, threshold: float = 1e-3):
        self.threshold = threshold
        self.count = 0

    def __call__(self, y: np.ndarray) -> np.ndarray:
        small = np.abs(y) < self.threshold
        n = int(small.sum())
        if n == 0:
            return y
        self.count += n
        sign = np.where(y < 0, -1.0, 1.0)
        return np.where(small, sign * self.threshold, y)

    def reset(self) -> int:
        n, self.count = self.count, 0
        return n


@dataclass
class ModelSpec:
    """Coefficients of the forward-backward system.

    Every callback receives arrays with a trailing coordinate axis and must
    broadcast over the leading (path[, node]) axes. ``t`` is broadcastable to
    the state's leading shape.
    """

    name: str
    params: dict
    drift: Callable  # (t, x, y, z, z0, s)
    sigma: Callable  # (t, x)
    sigma0: Callable  # (t, x)
    driver: Callable  # (t, x, y, z, z0, s)
    terminal: Callable  # (x, s)
    score: ScoreFunction
    sample_initial: Callable  # (rng, M) -> (M, dim)
    T: float = 1.0
    initial_guess: Callable | None = None  # (grid, xi) -> dict of (M, N+1, dim)
    clamp: ClampCounter | None = field(default=None, repr=False)


@dataclass
class SolverState:
    """(X, Y, Z, Z0, S) at outer iteration ``k`` on a shared grid and noise."""

    k: int
    X: PathBatch
    Y: PathBatch
    Z: PathBatch
    Z0: PathBatch
    S: PathBatch
    grid: TimeGrid
    noise: NoisePair | None = None

    def __post_init__(self):
        shapes = {p: getattr(self, p).values.shape[:2] for p in PROCESSES}
        if len(set(shapes.values())) != 1:
            raise ValueError(f"processes disagree on (paths, nodes): {shapes}")
        if next(iter(shapes.values()))[1] != self.grid.N + 1:
            raise ValueError("process length does not match the grid")

    @property
    def M(self) -> int:
        return self.X.M

    def batches(self) -> dict[str, PathBatch]:
        return {p: getattr(self, p) for p in PROCESSES}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(b.values)) for b in self.batches().values())
