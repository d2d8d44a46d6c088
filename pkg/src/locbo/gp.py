"""Gaussian-process surrogate with a Matern-5/2 kernel.

The model uses a constant mean equal to the mean of the conditioning
observations (zero when there are none) and an exact Cholesky solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

SQRT5 = np.sqrt(5.0)
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


class GPConditioningError(RuntimeError):
    """Raised when K + noise*I is not positive definite even after jitter."""


@dataclass(frozen=True)
class KernelParams:
    length_scale: float
    noise_variance: float
    output_scale: float = 1.0

    def __post_init__(self):
        for name in ("length_scale", "noise_variance", "output_scale"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive and finite, got {v}")

    def to_log(self) -> np.ndarray:
        return np.log([self.length_scale, self.noise_variance, self.output_scale])

    @classmethod
    def from_log(cls, theta) -> KernelParams:
        g, n, s = np.exp(np.asarray(theta, dtype=float))
        return cls(float(g), float(n), float(s))


@dataclass(frozen=True)
class PredictiveNormal:
    """Normal distribution; fields may be scalars or equal-shape arrays."""

    mean: np.ndarray | float
    variance: np.ndarray | float

    @property
    def std(self):
        return np.sqrt(self.variance)


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    return x


def pairwise_distance(A, B) -> np.ndarray:
    A = _as_2d(A)
    B = _as_2d(B)
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(sq, 0.0))


def matern52(x, x2, params: KernelParams) -> float:
    """Matern-5/2 kernel between two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x2))):
        raise ValueError("matern52 received non-finite input")
    r = float(np.linalg.norm(x - x2))
    u = SQRT5 * r / params.length_scale
    return float(params.output_scale * (1.0 + u + u * u / 3.0) * np.exp(-u))


def matern52_matrix(A, B, params: KernelParams) -> np.ndarray:
    u = SQRT5 * pairwise_distance(A, B) / params.length_scale
    return params.output_scale * (1.0 + u + u * u / 3.0) * np.exp(-u)


def _cholesky_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    scale = max(float(np.mean(np.diag(K))), 1.0) if K.size else 1.0
    for jitter in JITTER_LADDER:
        try:
            Kj = K + jitter * scale * np.eye(len(K)) if jitter else K
            return cholesky(Kj, lower=True), jitter * scale
        except np.linalg.LinAlgError:
            continue
    raise GPConditioningError(
        f"covariance of {len(K)} points not positive definite after jitter "
        f"{JITTER_LADDER[-1]:g}; inputs may be duplicated or length scale too large"
    )


@dataclass(frozen=True)
class GpModel:
    """Exact GP posterior conditioned on (X, y).

    ``mean_offset`` is subtracted from the observations before solving and added
    back on prediction. It defaults to ``mean(y)``.
    """

    params: KernelParams
    X: np.ndarray
    y: np.ndarray
    mean_offset: float
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @classmethod
    def fit(cls, X, y, params: KernelParams, mean_offset: float | None = None) -> GpModel:
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(y) == 0:
            X = np.zeros((0, _as_2d(X).shape[1] if np.size(X) else 1))
        else:
            X = _as_2d(X)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} inputs but {len(y)} observations")
        if mean_offset is None:
            mean_offset = float(np.mean(y)) if len(y) else 0.0
        if len(y) == 0:
            return cls(params, X, y, mean_offset, np.zeros((0, 0)), np.zeros(0))
        K = matern52_matrix(X, X, params) + params.noise_variance * np.eye(len(y))
        L, jitter = _cholesky_with_jitter(K)
        w = cho_solve((L, True), y - mean_offset)
        return cls(params, X, y, float(mean_offset), L, w, jitter)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def condition(self, x, y_new) -> GpModel:
        """New model with one extra observation and the same mean offset."""
        X = np.vstack([self.X, _as_2d(x)]) if self.n else _as_2d(x)
        y = np.append(self.y, y_new)
        return GpModel.fit(X, y, self.params, mean_offset=self.mean_offset)

    def posterior(self, x) -> PredictiveNormal:
        """Posterior over f at one point (1-d input) or a batch (2-d input)."""
        batch = np.ndim(x) == 2
        Xq = _as_2d(x)
        prior_var = np.full(len(Xq), self.params.output_scale)
        if self.n == 0:
            mean = np.full(len(Xq), self.mean_offset)
            var = prior_var
        else:
            Ks = matern52_matrix(self.X, Xq, self.params)
            mean = self.mean_offset + Ks.T @ self.weights
            v = solve_triangular(self.chol, Ks, lower=True)
            var = np.maximum(prior_var - (v * v).sum(0), 0.0)
        if batch:
            return PredictiveNormal(mean, var)
        return PredictiveNormal(float(mean[0]), float(var[0]))

    def predictive_observation(self, x) -> PredictiveNormal:
        post = self.posterior(x)
        return PredictiveNormal(post.mean, post.variance + self.params.noise_variance)

    def condition_one_point(self, x):
        """Coefficients (a, b, var_plus) of f(x) | D, (x, y') ~ N(a y' + b, var_plus).

        Uses the Gaussian conditioning identity on (f(x), y'), which is
        algebraically the same as solving the enlarged (t+1)x(t+1) system.
        """
        post = self.posterior(x)
        s2 = post.variance
        noise = self.params.noise_variance
        a = s2 / (s2 + noise)
        b = (1.0 - a) * post.mean
        var_plus = s2 * noise / (s2 + noise)
        return a, b, var_plus

    def log_marginal_likelihood(self) -> float:
        if self.n == 0:
            return 0.0
        r = self.y - self.mean_offset
        return float(
            -0.5 * r @ self.weights
            - np.log(np.diag(self.chol)).sum()
            - 0.5 * self.n * np.log(2 * np.pi)
        )


def condition_one_point_explicit(model: GpModel, x) -> tuple[float, float, float]:
    """Same coefficients via the enlarged system k'(x)^T (K' + noise I)^{-1}.

    O(t^3); used as an independent check of :meth:`GpModel.condition_one_point`.
    """
    p = model.params
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Xp = np.vstack([model.X, x[None, :]]) if model.n else x[None, :]
    Kp = matern52_matrix(Xp, Xp, p) + p.noise_variance * np.eye(len(Xp))
    kp = matern52_matrix(Xp, x[None, :], p)[:, 0]
    row = np.linalg.solve(Kp, kp)
    a = float(row[-1])
    b = float(row[:-1] @ (model.y - model.mean_offset) + model.mean_offset * (1.0 - a))
    var_plus = float(p.output_scale - kp @ row)
    return a, b, max(var_plus, 0.0)


# ---------------------------------------------------------------------------
# hyperparameter fitting


def _lml_and_grad(theta, X, r, D):
    """Negative log marginal likelihood and its gradient in log-parameters."""
    g, noise, s = np.exp(theta)
    n = len(r)
    u = SQRT5 * D / g
    e = np.exp(-u)
    Kf = s * (1.0 + u + u * u / 3.0) * e
    K = Kf + noise * np.eye(n)
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return np.inf, np.zeros(3)
    w = cho_solve((L, True), r)
    lml = -0.5 * r @ w - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
    Kinv = cho_solve((L, True), np.eye(n))
    M = np.outer(w, w) - Kinv
    dK_dlogg = s * u * u * (1.0 + u) / 3.0 * e
    grad = 0.5 * np.array(
        [
            np.sum(M * dK_dlogg),
            noise * np.trace(M),
            np.sum(M * Kf),
        ]
    )
    return -lml, -grad


def log_marginal_likelihood(X, y, params: KernelParams, mean_offset: float | None = None) -> float:
    y = np.asarray(y, dtype=float)
    if mean_offset is None:
        mean_offset = float(np.mean(y))
    X = _as_2d(X)
    val, _ = _lml_and_grad(params.to_log(), X, y - mean_offset, pairwise_distance(X, X))
    return -val


def lml_gradient(X, y, params: KernelParams, mean_offset: float | None = None) -> np.ndarray:
    """Gradient of the log marginal likelihood with respect to log-parameters."""
    y = np.asarray(y, dtype=float)
    if mean_offset is None:
        mean_offset = float(np.mean(y))
    X = _as_2d(X)
    _, g = _lml_and_grad(params.to_log(), X, y - mean_offset, pairwise_distance(X, X))
    return -g


@dataclass(frozen=True)
class FitResult:
    params: KernelParams
    log_likelihood: float
    converged: bool


def fit_hyperparameters(
    X,
    y,
    init: KernelParams,
    bounds,
    n_restarts: int = 2,
    seed: int = 0,
) -> FitResult:
    """Maximise the log marginal likelihood over a box in log-space.

    Args:
        X, y: conditioning data (non-empty).
        init: starting parameters; the result is never worse than this.
        bounds: ``((g_lo, g_hi), (noise_lo, noise_hi), (scale_lo, scale_hi))``.
        n_restarts: extra random starts drawn log-uniformly in the box.
        seed: seed for the random starts.

    Returns:
        FitResult; ``converged`` is False when no candidate was positive
        definite and ``init`` is returned unchanged.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) == 0:
        raise ValueError("cannot fit hyperparameters without data")
    log_bounds = np.log(np.asarray(bounds, dtype=float))
    r = y - np.mean(y)
    D = pairwise_distance(X, X)

    theta0 = np.clip(init.to_log(), log_bounds[:, 0], log_bounds[:, 1])
    init_val, _ = _lml_and_grad(theta0, X, r, D)
    rng = np.random.default_rng(seed)
    starts = [theta0] + [
        rng.uniform(log_bounds[:, 0], log_bounds[:, 1]) for _ in range(n_restarts)
    ]

    best_theta, best_val = theta0, init_val
    for th in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = minimize(
                _lml_and_grad,
                th,
                args=(X, r, D),
                jac=True,
                method="L-BFGS-B",
                bounds=log_bounds,
                options={"maxiter": 200},
            )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, res.fun

    if not np.isfinite(best_val):
        warnings.warn("hyperparameter fit failed: no positive-definite candidate")
        return FitResult(init, -np.inf, False)
    return FitResult(KernelParams.from_log(best_theta), float(-best_val), True)


def default_bounds(X, y, box_diag: float):
    """Fitting box scaled to the data: length scale by box size, variances by var(y)."""
    vy = max(float(np.var(y)), 1e-6) if len(y) > 1 else 1.0
    return (
        (1e-2 * box_diag, 2.0 * box_diag),
        (1e-6 * vy, 2.0 * vy),
        (1e-2 * vy, 1e2 * vy),
    )


def with_params(model: GpModel, params: KernelParams) -> GpModel:
    return GpModel.fit(model.X, model.y, params, mean_offset=model.mean_offset)


__all__ = [
    "FitResult",
    "GPConditioningError",
    "GpModel",
    "KernelParams",
    "PredictiveNormal",
    "condition_one_point_explicit",
    "default_bounds",
    "fit_hyperparameters",
    "lml_gradient",
    "log_marginal_likelihood",
    "matern52",
    "matern52_matrix",
    "pairwise_distance",
    "with_params",
]
