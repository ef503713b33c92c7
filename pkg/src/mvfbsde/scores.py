"""Scoring functions that elicit the mean-field statistic.

A score S(s, x) is minimised in expectation by the target statistic:
the quadratic score (phi(x) - s)^2 elicits E[phi(X)], the pinball score
elicits the alpha-quantile.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError


def quadratic_score(s, x, phi: Callable = None):
    """(phi(x) - s)^2, phi defaults to the identity."""
    fx = x if phi is None else phi(x)
    return (np.asarray(fx) - np.asarray(s)) ** 2


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"quantile level alpha must lie in (0, 1), got {alpha}")


def pinball_score(s, x, alpha: float):
    """(1{s >= x} - alpha) (s - x); its expected value is minimised at the alpha-quantile."""
    _check_alpha(alpha)
    s = np.asarray(s, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return ((s >= x).astype(np.float64) - alpha) * (s - x)


def pinball_subgradient(s, x, alpha: float):
    """d/ds of the pinball score (one-sided at the kink)."""
    _check_alpha(alpha)
    return (np.asarray(s) >= np.asarray(x)).astype(np.float64) - alpha


@dataclass(frozen=True)
class ScoreFunction:
    """A named score: ``kind`` is "mean" (quadratic) or "quantile" (pinball).

    ``evaluate`` works on plain arrays; ``tensor_loss`` builds the same
    quantity on the autodiff tape with the statistic as the trainable input.
    """

    kind: str = "mean"
    alpha: float | None = None
    phi: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("mean", "quantile"):
            raise ConfigurationError(f"unknown score kind {self.kind!r}")
        if self.kind == "quantile":
            if self.alpha is None:
                raise ConfigurationError("quantile score needs alpha")
            _check_alpha(self.alpha)

    @property
    def descriptor(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "quantile":
            d["alpha"] = self.alpha
        return d

    def target(self, x: np.ndarray) -> np.ndarray:
        return x if self.phi is None else self.phi(x)

    def evaluate(self, s, x):
        if self.kind == "mean":
            return quadratic_score(s, x, self.phi)
        return pinball_score(s, self.target(x), self.alpha)

    def tensor_score(self, s: Tensor, x: np.ndarray) -> Tensor:
        tx = np.asarray(self.target(x), dtype=s.value.dtype)
        if self.kind == "mean":
            return ad.square(ad.sub(s, tx))
        # the indicator is locally constant in s, so it enters as a fixed mask
        mask = (s.value >= tx).astype(s.value.dtype) - self.alpha
        return ad.mul(mask, ad.sub(s, tx))


def mean_score(phi: Callable | None = None) -> ScoreFunction:
    return ScoreFunction("mean", phi=phi)


def quantile_score(alpha: float) -> ScoreFunction:
    return ScoreFunction("quantile", alpha=alpha)


def weighted_mean(pointwise, weights) -> float | Tensor:
    """Sum_t w_t Sum_i v[i, t] / (I * Sum_t w_t) for values shaped (I, nodes, ...)."""
    if isinstance(pointwise, Tensor):
        v = pointwise
        shape = v.shape
    else:
        v = np.asarray(pointwise, dtype=np.float64)
        shape = v.shape
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(shape) < 2 or shape[1] != w.shape[0]:
        raise ConfigurationError(f"weights {w.shape} do not match values {shape}")
    scale = w / (shape[0] * w.sum() * (np.prod(shape[2:]) if len(shape) > 2 else 1))
    scale = scale.reshape((1, -1) + (1,) * (len(shape) - 2))
    if isinstance(v, Tensor):
        return ad.total(ad.mul(v, scale.astype(v.value.dtype)))
    return float(np.sum(v * scale))


def score_batch_loss(score: ScoreFunction, statistic, realizations, weights) -> float:
    """Weighted average score over (paths, nodes)."""
    s = np.asarray(statistic, dtype=np.float64)
    x = np.asarray(realizations, dtype=np.float64)
    if s.shape != x.shape:
        raise ConfigurationError(f"shape mismatch {s.shape} vs {x.shape}")
    return weighted_mean(score.evaluate(s, x), weights)
