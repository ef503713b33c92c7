import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from mvfbsde.errors import ConfigurationError, SimulationError
from mvfbsde.stochastics import (
    NoisePair,
    PathBatch,
    TimeGrid,
    euler_maruyama,
    l2_path_distance,
    sample_noise,
)


def zero(j, x):
    return np.zeros_like(x)


def test_grid_is_uniform_and_spans_horizon():
    g = TimeGrid(2.0, 8)
    assert g.times[0] == 0.0 and g.times[-1] == 2.0
    assert len(g) == 9
    np.testing.assert_allclose(np.diff(g.times), g.dt)


def test_grid_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        TimeGrid(1.0, 0)
    with pytest.raises(ConfigurationError):
        TimeGrid(-1.0, 10)


def test_path_batch_expands_scalar_processes():
    b = PathBatch("X", np.zeros((3, 5)))
    assert b.shape == (3, 5, 1)


def test_noise_starts_at_zero():
    n = sample_noise(TimeGrid(1.0, 20), 50, seed=9)
    assert np.all(n.W.values[:, 0] == 0) and np.all(n.W0.values[:, 0] == 0)


def test_noise_is_reproducible_and_path_stable():
    g = TimeGrid(1.0, 10)
    a = sample_noise(g, 30, seed=4)
    b = sample_noise(g, 30, seed=4)
    c = sample_noise(g, 10, seed=4)
    assert np.array_equal(a.W.values, b.W.values) and np.array_equal(a.W0.values, b.W0.values)
    # path i does not depend on how many paths were requested
    assert np.array_equal(a.W.values[:10], c.W.values)


def test_noise_increment_statistics():
    g = TimeGrid(1.0, 10)
    n = sample_noise(g, 100_000, seed=1)
    dW, dW0 = n.dW[..., 0], n.dW0[..., 0]
    for inc in (dW, dW0):
        var = inc.var(axis=0)
        assert np.all(np.abs(var / g.dt - 1) < 0.05)
    for j in range(g.N):
        assert abs(np.corrcoef(dW[:, j], dW0[:, j])[0, 1]) < 0.02
    pooled = np.concatenate([dW.ravel(), dW0.ravel()]) / np.sqrt(g.dt)
    assert abs(stats.skew(pooled)) < 0.05
    assert abs(stats.kurtosis(pooled)) < 0.05


def test_noise_subset():
    n = sample_noise(TimeGrid(1.0, 5), 8, seed=2)
    s = n.subset([1, 3])
    assert np.array_equal(s.W0.values, n.W0.values[[1, 3]])


def test_euler_with_zero_coefficients_is_identity():
    g = TimeGrid(1.0, 10)
    n = sample_noise(g, 20, seed=0)
    x0 = np.random.default_rng(0).normal(size=(20, 1))
    X = euler_maruyama(g, x0, zero, zero, zero, n)
    assert np.array_equal(X.values, np.repeat(x0[:, None, :], 11, axis=1))


def test_ou_mean_matches_closed_form():
    g = TimeGrid(1.0, 200)
    M = 10_000
    n = sample_noise(g, M, seed=3)
    X = euler_maruyama(g, np.ones((M, 1)), lambda j, x: -x, lambda j, x: 1.0, zero, n)
    xT = X.values[:, -1, 0]
    se = xT.std(ddof=1) / np.sqrt(M)
    # Euler bias (1 - dt)^N vs e^-1 is ~1e-3, well inside 3 standard errors
    assert abs(xT.mean() - np.exp(-1)) < 3 * se


def test_exponential_drift_reaches_e():
    g = TimeGrid(1.0, 10_000)
    n = NoisePair(PathBatch("W", np.zeros((1, g.N + 1))), PathBatch("W0", np.zeros((1, g.N + 1))), g)
    X = euler_maruyama(g, np.ones((1, 1)), lambda j, x: x, zero, zero, n)
    assert abs(X.values[0, -1, 0] / np.e - 1) < 0.01


def test_euler_matches_explicit_recursion(rng):
    g = TimeGrid(1.0, 6)
    n = sample_noise(g, 4, seed=5)
    x0 = rng.normal(size=(4, 1))
    X = euler_maruyama(g, x0, lambda j, x: np.sin(x) + g.times[j], lambda j, x: 0.5 + 0 * x,
                       lambda j, x: 0.2 * x, n)
    x = x0.copy()
    for j in range(g.N):
        x = x + (np.sin(x) + g.times[j]) * g.dt + 0.5 * n.dW[:, j] + 0.2 * x * n.dW0[:, j]
        np.testing.assert_allclose(X.values[:, j + 1], x, rtol=0, atol=1e-14)


def test_euler_reports_path_and_step_of_blow_up():
    g = TimeGrid(1.0, 10)
    n = sample_noise(g, 3, seed=0)

    def drift(j, x):
        out = np.zeros_like(x)
        if j == 4:
            out[1] = np.inf
        return out

    with pytest.raises(SimulationError) as info:
        euler_maruyama(g, np.zeros((3, 1)), drift, zero, zero, n)
    assert info.value.path == 1 and info.value.step == 5


def test_l2_distance_examples(rng):
    A = rng.normal(size=(4, 6, 1))
    assert l2_path_distance(A, A) == 0.0
    assert l2_path_distance(A, A + 1) == pytest.approx(1.0, abs=1e-14)
    B = rng.normal(size=(4, 6, 2))
    C = rng.normal(size=(4, 6, 2))
    total = 0.0
    for i in range(4):
        for j in range(6):
            total += sum((B[i, j, k] - C[i, j, k]) ** 2 for k in range(2))
    assert abs(l2_path_distance(B, C) - total / 24) < 1e-12
    with pytest.raises(ConfigurationError):
        l2_path_distance(B, A)


@given(st.integers(0, 10_000))
def test_l2_distance_is_a_pseudometric(seed):
    r = np.random.default_rng(seed)
    a, b, c = (r.normal(size=(3, 4, 1)) for _ in range(3))
    d = lambda u, v: np.sqrt(l2_path_distance(u, v))
    assert d(a, b) == pytest.approx(d(b, a))
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
