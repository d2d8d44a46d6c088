"""Online and localized online conformal calibration.

The localized threshold is ``lambda_t(x) = c_t + g_t(x)`` with ``g_t`` a kernel
expansion over past queries under an RBF kernel ``kappa * exp(-|x - x'|^2 / l^2)``.
A query is covered when its conformity score ``2 Q(|y - mu| / sigma)`` is at
least the threshold, so a smaller threshold gives a wider interval.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .gp import PredictiveNormal

LAMBDA_MIN = 1e-6
MIN_WIDTH_FRACTION = 1e-6


def std_normal_sf(z):
    return ndtr(-np.asarray(z, dtype=float))


def std_normal_isf(p):
    return -ndtri(np.asarray(p, dtype=float))


# ---------------------------------------------------------------------------
# scores and intervals


def nc_score(pred: PredictiveNormal, y):
    """Conformity score ``2 Q(|y - mu| / sigma)`` in [0, 1]; larger means more conforming."""
    z = np.abs(np.asarray(y, dtype=float) - pred.mean) / np.sqrt(pred.variance)
    s = 2.0 * std_normal_sf(z)
    return float(s) if np.ndim(s) == 0 else s


def effective_threshold(lam):
    return np.clip(lam, LAMBDA_MIN, 2.0 - LAMBDA_MIN)


@dataclass(frozen=True)
class PredictionInterval:
    lower: np.ndarray | float
    upper: np.ndarray | float
    threshold: np.ndarray | float

    @property
    def width(self):
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, y):
        return (np.asarray(y) >= self.lower) & (np.asarray(y) <= self.upper)


def interval(pred: PredictiveNormal, lam) -> PredictionInterval:
    """Interval ``mu -/+ Q^{-1}(lam/2) sigma`` with lam clamped to [1e-6, 2 - 1e-6]."""
    lam_eff = effective_threshold(lam)
    half = np.maximum(std_normal_isf(lam_eff / 2.0), 0.0) * np.sqrt(pred.variance)
    lo = pred.mean - half
    hi = pred.mean + half
    if np.ndim(lo) == 0:
        return PredictionInterval(float(lo), float(hi), float(lam_eff))
    return PredictionInterval(lo, hi, lam_eff)


# ---------------------------------------------------------------------------
# localized threshold function


def rbf(centers, x, kappa: float, length: float) -> np.ndarray:
    """Localization kernel between each center and each query row."""
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    Xq = np.atleast_2d(np.asarray(x, dtype=float))
    if math.isinf(length):
        return np.full((len(C), len(Xq)), float(kappa))
    d2 = ((C[:, None, :] - Xq[None, :, :]) ** 2).sum(-1)
    return kappa * np.exp(-d2 / length**2)


def step_size(eta1: float, w: float, t: int) -> float:
    return eta1 * float(t) ** (-w)


@dataclass(frozen=True)
class ThresholdFunction:
    """State of the localized online threshold ``c + sum_i coeffs_i k(centers_i, .)``."""

    c: float
    kappa: float
    length: float
    reg: float
    eta1: float
    w: float
    centers: tuple = ()
    coeffs: tuple = ()
    t: int = 0

    @classmethod
    def initial(cls, alpha: float, kappa: float, length: float, reg: float, eta1: float, w: float):
        return cls(c=float(alpha), kappa=kappa, length=length, reg=reg, eta1=eta1, w=w)

    def __call__(self, x):
        return eval_threshold(self, x)

    def to_json(self) -> str:
        return json.dumps(
            {
                "c": self.c,
                "centers": [list(map(float, c)) for c in self.centers],
                "coeffs": list(map(float, self.coeffs)),
                "kappa": self.kappa,
                "l": "inf" if math.isinf(self.length) else self.length,
                "lambda": self.reg,
                "eta1": self.eta1,
                "w": self.w,
                "t": self.t,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> ThresholdFunction:
        d = json.loads(text)
        return cls(
            c=d["c"],
            kappa=d["kappa"],
            length=float(d["l"]),
            reg=d["lambda"],
            eta1=d["eta1"],
            w=d["w"],
            centers=tuple(tuple(c) for c in d["centers"]),
            coeffs=tuple(d["coeffs"]),
            t=d["t"],
        )


def eval_threshold(tf: ThresholdFunction, x):
    """``c + g(x)``; a 1-d input gives a float, a 2-d batch gives an array."""
    batch = np.ndim(x) == 2
    n = len(x) if batch else 1
    out = np.full(n, tf.c)
    if tf.centers and tf.kappa != 0.0:
        K = rbf(np.asarray(tf.centers), np.atleast_2d(x), tf.kappa, tf.length)
        out = out + np.asarray(tf.coeffs) @ K
    return out if batch else float(out[0])


def locp_update(tf: ThresholdFunction, x_t, covered: bool, t: int, alpha: float) -> ThresholdFunction:
    """One localized online CP step after observing round ``t`` (1-based)."""
    eta = step_size(tf.eta1, tf.w, t)
    if tf.reg > 0 and eta >= 1.0 / tf.reg:
        raise ValueError(f"step size {eta:g} must be below 1/lambda = {1.0 / tf.reg:g}")
    miss = 0.0 if covered else 1.0
    delta = eta * (alpha - miss)
    shrink = 1.0 - tf.reg * eta
    return replace(
        tf,
        c=tf.c + delta,
        centers=tf.centers + (tuple(float(v) for v in np.atleast_1d(x_t)),),
        coeffs=tuple(v * shrink for v in tf.coeffs) + (delta,),
        t=t,
    )


# ---------------------------------------------------------------------------
# OCBO recalibrator


def default_level_grid(m: int = 10) -> np.ndarray:
    return np.linspace(0.05, 0.95, m)


@dataclass(frozen=True)
class Recalibrator:
    """Piecewise-linear map from nominal to recalibrated quantile level."""

    levels: np.ndarray
    values: np.ndarray
    eta1: float
    w: float
    t: int = 0

    def __post_init__(self):
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("levels must be strictly increasing")

    @classmethod
    def identity(cls, levels=None, eta1: float = 5e-3, w: float = 0.0) -> Recalibrator:
        levels = default_level_grid() if levels is None else np.asarray(levels, dtype=float)
        return cls(levels, levels.copy(), eta1, w)

    def __call__(self, level, x=None):
        return np.interp(level, self.levels, self.values)

    def values_at(self, x=None) -> np.ndarray:
        return self.values

    def update(self, x_t, covered_per_level, t: int) -> Recalibrator:
        return ocbo_update(self, covered_per_level, t)

    def to_json(self) -> str:
        return json.dumps(
            {
                "levels": self.levels.tolist(),
                "values": self.values.tolist(),
                "eta1": self.eta1,
                "w": self.w,
                "t": self.t,
            }
        )


def ocbo_update(rec: Recalibrator, covered_per_level, t: int) -> Recalibrator:
    """``R(a_i) <- clip(R(a_i) - eta_t (a_i - miss_i), 0, 1)`` for every grid level."""
    covered = np.asarray(covered_per_level, dtype=bool)
    if covered.shape != rec.levels.shape:
        raise ValueError(f"expected {len(rec.levels)} coverage flags, got {covered.shape}")
    eta = step_size(rec.eta1, rec.w, t)
    miss = (~covered).astype(float)
    vals = np.clip(rec.values - eta * (rec.levels - miss), 0.0, 1.0)
    return replace(rec, values=vals, t=t)


@dataclass(frozen=True)
class LocalizedRecalibrator:
    """OCBO-L: one localized expansion per grid level over shared centers.

    ``R_i(x) = clip(c_i + sum_j coeffs[j, i] k(center_j, x), 0, 1)``.
    """

    levels: np.ndarray
    c: np.ndarray
    kappa: float
    length: float
    reg: float
    eta1: float
    w: float
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    t: int = 0

    @classmethod
    def identity(cls, levels=None, kappa=5.0, length=5.0, reg=4e-3, eta1=5e-3, w=0.0):
        levels = default_level_grid() if levels is None else np.asarray(levels, dtype=float)
        return cls(levels, levels.copy(), kappa, length, reg, eta1, w,
                   np.zeros((0, 0)), np.zeros((0, len(levels))))

    def values_at(self, x) -> np.ndarray:
        """Recalibrated levels at one point (shape (M,)) or a batch (shape (n, M))."""
        batch = np.ndim(x) == 2
        Xq = np.atleast_2d(x)
        out = np.tile(self.c, (len(Xq), 1))
        if len(self.centers) and self.kappa != 0.0:
            K = rbf(self.centers, Xq, self.kappa, self.length)
            out = out + K.T @ self.coeffs
        out = np.clip(out, 0.0, 1.0)
        return out if batch else out[0]

    def __call__(self, level, x):
        return np.interp(level, self.levels, self.values_at(x))

    def update(self, x_t, covered_per_level, t: int) -> LocalizedRecalibrator:
        covered = np.asarray(covered_per_level, dtype=bool)
        eta = step_size(self.eta1, self.w, t)
        if self.reg > 0 and eta >= 1.0 / self.reg:
            raise ValueError(f"step size {eta:g} must be below 1/lambda = {1.0 / self.reg:g}")
        delta = -eta * (self.levels - (~covered).astype(float))
        x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
        centers = x_t[None, :] if len(self.centers) == 0 else np.vstack([self.centers, x_t])
        coeffs = np.vstack([self.coeffs * (1.0 - self.reg * eta), delta[None, :]])
        return replace(self, c=self.c + delta, centers=centers, coeffs=coeffs, t=t)

    def to_json(self) -> str:
        return json.dumps(
            {
                "levels": self.levels.tolist(),
                "c": self.c.tolist(),
                "centers": self.centers.tolist(),
                "coeffs": self.coeffs.tolist(),
                "kappa": self.kappa,
                "l": "inf" if math.isinf(self.length) else self.length,
                "lambda": self.reg,
                "eta1": self.eta1,
                "w": self.w,
                "t": self.t,
            }
        )


def recalibrated_quantile(pred: PredictiveNormal, level):
    """Left quantile of the Gaussian predictive at a (recalibrated) level."""
    lv = np.clip(level, LAMBDA_MIN, 1.0 - LAMBDA_MIN)
    return pred.mean + np.sqrt(pred.variance) * ndtri(lv)


# ---------------------------------------------------------------------------
# coverage audit


def rbf_lipschitz(kappa: float, length: float) -> float:
    """Lipschitz constant of ``kappa * exp(-z^2 / l^2)`` in z."""
    if math.isinf(length) or kappa == 0:
        return 0.0
    return kappa * math.sqrt(2.0) * math.exp(-0.5) / length


def coverage_beta(eta1: float, reg: float, kappa: float, length: float, radius: float) -> float:
    rho = rbf_lipschitz(kappa, length)
    local = 0.0
    if kappa > 0 and rho > 0:
        local = 4.0 * math.sqrt(rho * kappa * radius) / (eta1 * reg)
    return 2.0 / eta1 + local + 2.0 * (2.0 * kappa + 1.0)


@dataclass(frozen=True)
class CoverageAudit:
    miscoverage_rate: float
    bound: float
    beta: float
    T: int
    score_bound: float = 2.0

    @property
    def satisfied(self) -> bool:
        return self.miscoverage_rate <= self.bound


def coverage_audit(y, lower, upper, alpha, eta1, reg, kappa, length, radius) -> CoverageAudit:
    """Empirical miscoverage of a run against ``alpha + beta / sqrt(T) + kappa``.

    ``radius`` bounds the input norm; pass the search-box half-diagonal or the
    largest norm in the box. ``score_bound`` reports the bound B on the score.
    """
    y = np.asarray(y, dtype=float)
    if len(y) < 1:
        raise ValueError("coverage audit needs at least one round")
    miss = (y < np.asarray(lower)) | (y > np.asarray(upper))
    beta = coverage_beta(eta1, reg, kappa, length, radius)
    T = len(y)
    return CoverageAudit(float(miss.mean()), alpha + beta / math.sqrt(T) + kappa, beta, T)
