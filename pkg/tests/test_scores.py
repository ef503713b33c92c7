import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq, minimize_scalar

from mvfbsde.autodiff import Tape, Tensor
from mvfbsde.errors import ConfigurationError
from mvfbsde.scores import (
    ScoreFunction,
    mean_score,
    pinball_score,
    pinball_subgradient,
    quadratic_score,
    quantile_score,
    score_batch_loss,
    weighted_mean,
)


def test_quadratic_examples():
    assert quadratic_score(2.5, 2.5) == 0.0
    assert quadratic_score(1.0, 3.0) == 4.0
    assert quadratic_score(1.0, 2.0, phi=lambda x: x**2) == 9.0


def test_quadratic_minimiser_over_samples():
    xs = np.array([1.0, 2.0, 3.0])
    grid = np.linspace(0, 4, 4001)
    values = [quadratic_score(s, xs).mean() for s in grid]
    assert grid[int(np.argmin(values))] == pytest.approx(2.0, abs=1e-12)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
def test_quadratic_minimiser_is_the_sample_mean(xs):
    xs = np.array(xs)
    h = 1e-3

    def slope(s):
        return (quadratic_score(s + h, xs).mean() - quadratic_score(s - h, xs).mean()) / (2 * h)

    # the stationary point of the empirical risk, located numerically
    s_star = brentq(slope, -60, 60, xtol=1e-14)
    assert abs(s_star - xs.mean()) < 1e-8


def test_pinball_examples():
    assert pinball_score(1.0, 2.0, 0.5) == 0.5
    # (1{s >= x} - alpha)(s - x) with s = 1, x = 0
    assert pinball_score(1.0, 0.0, 0.6) == pytest.approx(0.4)
    assert pinball_score(-1.0, 0.0, 0.6) == pytest.approx(0.6)


def test_pinball_rejects_bad_alpha():
    for a in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ConfigurationError):
            pinball_score(0.0, 1.0, a)
    with pytest.raises(ConfigurationError):
        ScoreFunction("quantile")
    with pytest.raises(ConfigurationError):
        ScoreFunction("median")


def test_pinball_minimiser_is_the_empirical_quantile():
    xs = np.random.default_rng(0).standard_normal(10_000)
    res = minimize_scalar(lambda s: pinball_score(s, xs, 0.6).mean(), bounds=(-3, 3),
                          method="bounded", options={"xatol": 1e-6})
    q = np.sort(xs)[int(np.ceil(0.6 * len(xs))) - 1]
    assert abs(res.x - q) < 0.03
    assert res.x > 0  # the 60% quantile of a centred law is positive


@given(st.lists(st.integers(-20, 20), min_size=2, max_size=25), st.floats(0.05, 0.95))
def test_pinball_minimisers_lie_between_bracketing_order_statistics(xs, alpha):
    xs = np.sort(np.array(xs, dtype=float))
    n = len(xs)
    k = int(np.ceil(alpha * n))  # 1-based index of the lower alpha-quantile
    lo = xs[k - 1]
    hi = xs[min(k, n - 1)] if alpha * n == k else lo
    candidates = np.unique(xs)
    losses = np.array([pinball_score(s, xs, alpha).sum() for s in candidates])
    best = candidates[np.isclose(losses, losses.min(), rtol=0, atol=1e-9)]
    assert np.all((best >= lo) & (best <= hi))


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.05, 0.95))
def test_scores_are_nonnegative_and_vanish_on_the_realisation(s, x, alpha):
    assert pinball_score(s, x, alpha) >= 0
    assert quadratic_score(s, x) >= 0
    assert pinball_score(x, x, alpha) == 0
    assert quadratic_score(x, x) == 0


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.05, 0.95))
def test_pinball_subgradient_matches_finite_differences(s, x, alpha):
    h = 1e-6
    if abs(s - x) < 10 * h:
        return
    fd = (pinball_score(s + h, x, alpha) - pinball_score(s - h, x, alpha)) / (2 * h)
    assert abs(fd - pinball_subgradient(s, x, alpha)) < 1e-6
    # away from the kink: (1 - alpha) - 1{x > s}
    assert pinball_subgradient(s, x, alpha) == pytest.approx((1 - alpha) - float(x > s))


def test_tensor_scores_match_array_scores(rng):
    s = rng.normal(size=(4, 3))
    x = rng.normal(size=(4, 3))
    for score in (mean_score(), quantile_score(0.3)):
        np.testing.assert_allclose(score.tensor_score(Tensor(s), x).value, score.evaluate(s, x))


def test_tensor_pinball_gradient_is_the_subgradient(rng):
    s = Tensor(rng.normal(size=6), requires_grad=True)
    x = rng.normal(size=6)
    score = quantile_score(0.7)
    with Tape() as tape:
        from mvfbsde import autodiff as ad

        (g,) = tape.gradient(ad.total(score.tensor_score(s, x)), [s])
    np.testing.assert_allclose(g, pinball_subgradient(s.value, x, 0.7))


def test_descriptor_round_trips():
    sc = quantile_score(0.6)
    assert sc.descriptor == {"kind": "quantile", "alpha": 0.6}
    assert ScoreFunction(**sc.descriptor) == sc
    assert mean_score().descriptor == {"kind": "mean"}


def test_batch_loss_examples(rng):
    x = rng.normal(size=(5, 4))
    w = np.ones(4)
    assert score_batch_loss(mean_score(), x, x, w) == 0.0
    assert weighted_mean(np.full((5, 4), 2.5), w) == pytest.approx(2.5)
    with pytest.raises(ConfigurationError):
        score_batch_loss(mean_score(), x, x[:, :3], w)


def test_batch_loss_matches_double_loop(rng):
    s = rng.normal(size=(6, 5))
    x = rng.normal(size=(6, 5))
    w = rng.uniform(0.5, 3, size=5)
    for score in (mean_score(), quantile_score(0.25)):
        num = 0.0
        for i in range(6):
            for t in range(5):
                num += w[t] * float(score.evaluate(s[i, t], x[i, t]))
        expected = num / (6 * w.sum())
        assert abs(score_batch_loss(score, s, x, w) - expected) < 1e-12


def test_weighted_mean_agrees_on_tensors(rng):
    v = rng.normal(size=(3, 4, 2))
    w = rng.uniform(size=4)
    assert float(weighted_mean(Tensor(v), w).value) == pytest.approx(weighted_mean(v, w), abs=1e-14)
