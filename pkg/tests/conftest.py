import numpy as np
import pytest

from locbo.gp import GpModel, KernelParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_model(rng):
    """GP on 8 noisy points of a smooth 2-d function."""
    X = rng.uniform(-2, 2, size=(8, 2))
    y = np.sin(X[:, 0]) + 0.5 * np.cos(X[:, 1]) + 0.1 * rng.standard_normal(8)
    return GpModel.fit(X, y, KernelParams(1.2, 0.05, 1.5))


def random_dataset(rng, n=None, d=None):
    n = int(rng.integers(1, 51)) if n is None else n
    d = int(rng.integers(1, 4)) if d is None else d
    X = rng.uniform(-3, 3, size=(n, d))
    y = rng.standard_normal(n)
    params = KernelParams(float(rng.uniform(0.3, 3.0)), float(rng.uniform(0.01, 0.5)),
                          float(rng.uniform(0.5, 2.0)))
    return X, y, params


def dense_posterior(X, y, params, xq, mean_offset):
    """Reference GP posterior by explicit dense solves, no cached factorization."""
    from locbo.gp import matern52

    n = len(y)
    K = np.array([[matern52(X[i], X[j], params) for j in range(n)] for i in range(n)])
    K += params.noise_variance * np.eye(n)
    k = np.array([matern52(X[i], xq, params) for i in range(n)])
    mean = mean_offset + k @ np.linalg.solve(K, y - mean_offset)
    var = params.output_scale - k @ np.linalg.solve(K, k)
    return mean, max(var, 0.0)
