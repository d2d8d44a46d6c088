"""Synthetic maximisation benchmarks with input-dependent Gaussian noise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

ACKLEY_A = 20.0
ACKLEY_B = 0.2
ACKLEY_C = 2.0 * np.pi

# Brute force over 1e6 grid points on [-5, 5] followed by bounded scalar
# refinement; the function is even so -x is an equal maximiser.
SYNTHETIC1D_ARGMAX = 3.99334852081612
SYNTHETIC1D_MAX = 4.958013609943399


def _check_box(x, lo, hi, name):
    x = np.asarray(x, dtype=float)
    if np.any(x < lo) or np.any(x > hi) or not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: input {x} outside [{lo}, {hi}]")
    return x


def ackley2d(x) -> float:
    x = _check_box(x, -10.0, 10.0, "ackley2d")
    if x.shape[-1] != 2:
        raise ValueError("ackley2d expects 2-vectors")
    r = np.sqrt(0.5 * np.sum(x * x, axis=-1))
    cs = 0.5 * np.sum(np.cos(ACKLEY_C * x), axis=-1)
    # grouped so the maximum at the origin evaluates to exactly 0
    out = ACKLEY_A * (np.exp(-ACKLEY_B * r) - 1.0) + (np.exp(cs) - np.e)
    return float(out) if np.ndim(out) == 0 else out


def synthetic1d(x) -> float:
    x = _check_box(x, -5.0, 5.0, "synthetic1d")
    x = x[..., 0] if x.ndim and x.shape[-1] == 1 else x
    out = x * np.sin(2.0 * x) + np.cos(np.pi * x)
    return float(out) if np.ndim(out) == 0 else out


def hetero_noise_ackley(x) -> float:
    x = np.asarray(x, dtype=float)
    out = (np.linalg.norm(x, axis=-1) + 10.0) / 20.0
    return float(out) if np.ndim(out) == 0 else out


def hetero_noise_1d(x) -> float:
    x = np.asarray(x, dtype=float)
    out = (np.abs(x[..., 0] if x.ndim and x.shape[-1] == 1 else x) + 1.0) / 10.0
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "none"
    variance_fn: Callable | None = None
    constant: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "homoscedastic-gaussian", "heteroscedastic-gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")

    def variance(self, x):
        if self.kind == "none":
            return 0.0
        if self.kind == "homoscedastic-gaussian":
            return self.constant
        return self.variance_fn(x)

    def draw(self, x, rng: np.random.Generator) -> float:
        if self.kind == "none":
            return 0.0
        return float(np.sqrt(self.variance(x)) * rng.standard_normal())


@dataclass(frozen=True)
class Problem:
    name: str
    lower: np.ndarray
    upper: np.ndarray
    objective: Callable
    noise: NoiseModel = NoiseModel()
    argmax: np.ndarray | None = None
    max_value: float | None = None
    # custom noisy oracle (x, rng) -> y; overrides objective + noise
    sampler: Callable | None = None
    # coordinate groups cycled through by block-coordinate candidate search
    blocks: tuple | None = None
    # whether f is cheap enough to evaluate at every query for audits
    cheap_f: bool = True

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def radius(self) -> float:
        """Largest input norm over the box."""
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def f(self, x) -> float:
        return self.objective(x)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def check_known_max(self, n_probe: int = 10**6, seed: int = 0, tol: float = 1e-9) -> bool:
        if self.max_value is None:
            return True
        rng = np.random.default_rng(seed)
        probe = self.sample_uniform(rng, n_probe)
        return bool(np.max(self.objective(probe)) <= self.max_value + tol)


def observe(problem: Problem, x, rng: np.random.Generator) -> float:
    if not problem.contains(x):
        raise ValueError(f"query {x} outside the search box of {problem.name}")
    if problem.sampler is not None:
        return float(problem.sampler(x, rng))
    fx = problem.f(x)
    return float(fx + problem.noise.draw(x, rng))


def make_ackley2d(noise: str = "none", noise_variance: float = 0.5) -> Problem:
    noises = {
        "none": NoiseModel(),
        "homo": NoiseModel("homoscedastic-gaussian", constant=noise_variance),
        "hetero": NoiseModel("heteroscedastic-gaussian", hetero_noise_ackley),
    }
    suffix = "" if noise == "none" else f"-{noise}"
    return Problem(
        name=f"ackley2d{suffix}",
        lower=np.array([-10.0, -10.0]),
        upper=np.array([10.0, 10.0]),
        objective=ackley2d,
        noise=noises[noise],
        argmax=np.zeros(2),
        max_value=0.0,
    )


def make_synthetic1d(noise: str = "hetero") -> Problem:
    nm = NoiseModel("heteroscedastic-gaussian", hetero_noise_1d) if noise == "hetero" else NoiseModel()
    return Problem(
        name="synthetic1d-hetero" if noise == "hetero" else "synthetic1d",
        lower=np.array([-5.0]),
        upper=np.array([5.0]),
        objective=synthetic1d,
        noise=nm,
        argmax=np.array([SYNTHETIC1D_ARGMAX]),
        max_value=SYNTHETIC1D_MAX,
    )


def empirical_noise_symmetry(noise: NoiseModel, xs, n_draws: int, rng: np.random.Generator) -> float:
    """Estimate of b_xi: min over probe inputs of min(P(xi >= 0), P(xi <= 0))."""
    worst = 1.0
    for x in xs:
        v = noise.variance(x)
        draws = np.sqrt(v) * rng.standard_normal(n_draws)
        worst = min(worst, float(np.mean(draws >= 0)), float(np.mean(draws <= 0)))
    return worst
