"""Bayesian-optimisation loops: LOCBO, vanilla BO, OCBO, OCBO-L and random search.

Each run is a pure function of ``(problem, config)``. Randomness is split into
independent streams (initial design, candidate draws, observation noise,
Monte-Carlo base samples, hyperparameter restarts) spawned from ``config.seed``
so that methods sharing a seed see the same initial design and noise stream.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from . import calibration as cal
from . import conformal as cp
from .gp import GpModel, KernelParams, default_bounds, fit_hyperparameters
from .problems import Problem, observe

METHODS = ("BO", "OCBO", "OCBO-L", "LOCBO", "RS")


@dataclass(frozen=True)
class BoConfig:
    method: str = "LOCBO"
    alpha: float = 0.2
    eta1: float = 5e-3
    w: float = 5e-2
    length: float = 5.0
    kappa: float = 4.0
    reg: float = 4e-3
    T: int = 50
    n_init: int = 5
    n_candidates: int = 512
    n_mc: int = 256
    seed: int = 0
    n_levels: int = 10
    n_restarts: int = 2
    label: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.T < 1 or self.n_init < 1 or self.n_candidates < 1 or self.n_mc < 1:
            raise ValueError("T, n_init, n_candidates and n_mc must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.reg > 0 and self.eta1 >= 1.0 / self.reg:
            raise ValueError("eta1 must be below 1/reg")

    @property
    def name(self) -> str:
        return self.label or self.method

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["length"]):
            d["length"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BoConfig:
        d = dict(d)
        if "length" in d:
            d["length"] = float(d["length"])
        return cls(**d)


def synthetic_config(method: str, **overrides) -> BoConfig:
    """Defaults for the synthetic benchmarks."""
    kappa = 5.0 if method == "OCBO-L" else 4.0
    base = dict(method=method, alpha=0.2, eta1=5e-3, w=5e-2, length=5.0, kappa=kappa,
                reg=4e-3, T=50, n_init=5, n_candidates=512, n_mc=256)
    if method == "RS":
        base["n_candidates"] = 1
    base.update(overrides)
    return BoConfig(**base)


def rrm_config(method: str, **overrides) -> BoConfig:
    """Defaults for the UAV network problem."""
    base = dict(method=method, alpha=0.25, eta1=5e-3, w=5e-3, length=1.0 / 3.0, kappa=2.0,
                reg=1e-4, T=90, n_init=50, n_candidates=100, n_mc=256)
    if method == "RS":
        base["n_candidates"] = 1
    base.update(overrides)
    return BoConfig(**base)


# ---------------------------------------------------------------------------
# trace


@dataclass
class RoundRecord:
    t: int
    x: list
    y: float
    lower: float
    upper: float
    threshold: float
    covered: bool
    acq: float
    incumbent: float
    regret: float
    f_x: float = float("nan")
    f_incumbent: float = float("nan")
    c: float = float("nan")


@dataclass
class Trace:
    problem: str
    config: BoConfig
    init_X: np.ndarray
    init_y: np.ndarray
    rounds: list = field(default_factory=list)
    x_hat: np.ndarray | None = None
    state_json: str | None = None
    error: str | None = None

    @property
    def X(self) -> np.ndarray:
        return np.array([r.x for r in self.rounds])

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.rounds])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rounds], dtype=float)

    def csv_header(self) -> list:
        d = len(self.init_X[0]) if len(self.init_X) else len(self.rounds[0].x)
        return (["t"] + [f"x{i}" for i in range(d)]
                + ["y", "L", "U", "lambda", "covered", "acq", "incumbent", "regret", "f_incumbent"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        for r in self.rounds:
            w.writerow([r.t] + [repr(float(v)) for v in r.x]
                       + [repr(float(v)) for v in (r.y, r.lower, r.upper, r.threshold)]
                       + [int(r.covered)]
                       + [repr(float(v)) for v in (r.acq, r.incumbent, r.regret, r.f_incumbent)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "problem": self.problem,
                "config": self.config.to_dict(),
                "init_X": np.asarray(self.init_X).tolist(),
                "init_y": np.asarray(self.init_y).tolist(),
                "rounds": [asdict(r) for r in self.rounds],
                "x_hat": None if self.x_hat is None else np.asarray(self.x_hat).tolist(),
                "conformal_state": None if self.state_json is None else json.loads(self.state_json),
                "error": self.error,
            },
            allow_nan=True,
        )


# ---------------------------------------------------------------------------
# candidate selection


def select_candidate(acq, box, n_candidates: int, rng: np.random.Generator):
    """Argmax of ``acq`` over ``n_candidates`` uniform draws in ``box`` (first on ties).

    ``box`` needs ``lower`` and ``upper``; if it also has ``embed`` the draws are
    mapped through it, which is how block-coordinate sub-problems are searched.
    Returns ``(x, value)``.
    """
    if n_candidates < 1:
        raise ValueError("n_candidates must be positive")
    lo, hi = np.asarray(box.lower, dtype=float), np.asarray(box.upper, dtype=float)
    draws = rng.uniform(lo, hi, size=(n_candidates, len(lo)))
    if hasattr(box, "embed"):
        draws = box.embed(draws)
    if n_candidates == 1:
        return draws[0], float(np.atleast_1d(acq(draws))[0])
    values = np.asarray(acq(draws), dtype=float)
    i = int(np.argmax(values))
    return draws[i], float(values[i])


@dataclass(frozen=True)
class _Block:
    base: np.ndarray
    idx: tuple
    lower: np.ndarray
    upper: np.ndarray

    def embed(self, sub):
        full = np.tile(self.base, (len(sub), 1))
        full[:, list(self.idx)] = sub
        return full


def _search_box(problem: Problem, t: int, incumbent_x):
    if problem.blocks is None:
        return problem
    idx = problem.blocks[(t - 1) % len(problem.blocks)]
    return _Block(np.asarray(incumbent_x, dtype=float), idx,
                  problem.lower[list(idx)], problem.upper[list(idx)])


def mc_base_samples(n: int, seed) -> np.ndarray:
    """Scrambled Sobol points in (0, 1)^2 shared by every candidate of a round."""
    sob = qmc.Sobol(d=2, scramble=True, seed=seed)
    m = int(math.log2(n))
    u = sob.random_base2(m) if 2**m == n else sob.random(n)
    return np.clip(u, 1e-12, 1.0 - 1e-12)


# ---------------------------------------------------------------------------
# acquisition helpers per method


def _interp_level(levels, values, q):
    """Row-wise linear interpolation of values (n, M) at scalar level q."""
    j = int(np.clip(np.searchsorted(levels, q) - 1, 0, len(levels) - 2))
    wgt = (q - levels[j]) / (levels[j + 1] - levels[j])
    wgt = min(max(wgt, 0.0), 1.0)
    return values[..., j] * (1.0 - wgt) + values[..., j + 1] * wgt


def ocbo_gaussian(pred, rec_values, levels, alpha):
    """Gaussian matched to the recalibrated median and (1 - alpha) interval."""
    q_lo = cp.recalibrated_quantile(pred, _interp_level(levels, rec_values, 0.5 * alpha))
    q_hi = cp.recalibrated_quantile(pred, _interp_level(levels, rec_values, 1.0 - 0.5 * alpha))
    med = cp.recalibrated_quantile(pred, _interp_level(levels, rec_values, 0.5))
    lo, hi = np.minimum(q_lo, q_hi), np.maximum(q_lo, q_hi)
    z = ndtri(1.0 - 0.5 * alpha)
    std = np.maximum((hi - lo) / (2.0 * z), 1e-12)
    return med, std, lo, hi


class _Surrogate:
    """GP refitted by maximum likelihood after every observation."""

    def __init__(self, problem: Problem, config: BoConfig, fit_seed: np.random.SeedSequence):
        self.diag = problem.diagonal
        self.config = config
        self.params = KernelParams(0.2 * self.diag, 0.1, 1.0)
        self._seeds = fit_seed

    def refit(self, X, y) -> GpModel:
        bounds = default_bounds(X, y, self.diag)
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        init = KernelParams(*np.clip([self.params.length_scale, self.params.noise_variance,
                                      self.params.output_scale], lo, hi))
        seed = int(self._seeds.spawn(1)[0].generate_state(1)[0])
        res = fit_hyperparameters(X, y, init, bounds, n_restarts=self.config.n_restarts, seed=seed)
        self.params = res.params
        return GpModel.fit(X, y, self.params)


# ---------------------------------------------------------------------------
# main loop


def run(problem: Problem, config: BoConfig) -> Trace:
    """Run ``config.T`` rounds after ``config.n_init`` uniform initial queries."""
    ss = np.random.SeedSequence(config.seed)
    s_init, s_cand, s_noise, s_mc, s_fit = ss.spawn(5)
    rng_init = np.random.default_rng(s_init)
    rng_cand = np.random.default_rng(s_cand)
    rng_noise = np.random.default_rng(s_noise)

    X = problem.sample_uniform(rng_init, config.n_init)
    y = np.array([observe(problem, x, rng_noise) for x in X])
    trace = Trace(problem.name, config, X.copy(), y.copy())

    f_cache: dict = {}

    def f_of(x):
        key = tuple(np.round(np.asarray(x, dtype=float), 15))
        if key not in f_cache:
            f_cache[key] = float(problem.f(x))
        return f_cache[key]

    method = config.method
    alpha = config.alpha
    state = None
    if method == "LOCBO":
        state = cp.ThresholdFunction.initial(alpha, config.kappa, config.length, config.reg,
                                             config.eta1, config.w)
    elif method == "OCBO":
        state = cp.Recalibrator.identity(cp.default_level_grid(config.n_levels), config.eta1, config.w)
    elif method == "OCBO-L":
        state = cp.LocalizedRecalibrator.identity(cp.default_level_grid(config.n_levels), config.kappa,
                                                  config.length, config.reg, config.eta1, config.w)

    surrogate = _Surrogate(problem, config, s_fit)
    needs_model = method != "RS"
    try:
        model = surrogate.refit(X, y) if needs_model else None
    except Exception as exc:  # noqa: BLE001 - conditioning failure aborts with trace
        trace.error = f"initial GP fit failed: {exc}"
        return trace

    for t in range(1, config.T + 1):
        i_best = int(np.argmax(y))
        y_best = float(y[i_best])
        box = _search_box(problem, t, X[i_best])

        if method == "RS":
            def acq(C):
                return np.zeros(len(C))
        elif method == "BO":
            def acq(C):
                post = model.posterior(C)
                return cal.gaussian_ei(post.mean, np.sqrt(post.variance), y_best)
        elif method == "LOCBO":
            u = mc_base_samples(config.n_mc, np.random.default_rng(s_mc.spawn(1)[0]))

            def acq(C):
                pred = model.predictive_observation(C)
                cl = cal.calibrated_likelihood(pred, cp.eval_threshold(state, C), alpha)
                post = cal.denoised_posterior(model, C, cl, check=False)
                return cal.mc_expected_improvement(post, y_best, u)
        else:
            def acq(C):
                pred = model.predictive_observation(C)
                mean, std, _, _ = ocbo_gaussian(pred, state.values_at(C) if method == "OCBO-L"
                                                else np.tile(state.values, (len(C), 1)),
                                                state.levels, alpha)
                return cal.gaussian_ei(mean, std, y_best)

        if method == "RS":
            x_t, a_t = select_candidate(acq, problem, 1, rng_cand)
        else:
            x_t, a_t = select_candidate(acq, box, config.n_candidates, rng_cand)

        # interval at x_t from D_{t-1} and the current calibration state
        pred_t = model.predictive_observation(x_t[None, :]) if needs_model else None
        if method == "LOCBO":
            lam_t = cp.eval_threshold(state, x_t[None, :])
        else:
            lam_t = np.array([alpha])
        if method in ("OCBO", "OCBO-L"):
            vals = state.values_at(x_t[None, :]) if method == "OCBO-L" else state.values[None, :]
            _, _, lo_t, hi_t = ocbo_gaussian(pred_t, vals, state.levels, alpha)
            lo_t, hi_t = float(lo_t[0]), float(hi_t[0])
            q_levels = cp.recalibrated_quantile(pred_t, vals[0])
        elif needs_model:
            iv = cp.interval(pred_t, lam_t)
            lo_t, hi_t = float(iv.lower[0]), float(iv.upper[0])
        else:
            lo_t, hi_t = -math.inf, math.inf

        y_t = observe(problem, x_t, rng_noise)
        covered = lo_t <= y_t <= hi_t

        if method == "LOCBO":
            state = cp.locp_update(state, x_t, covered, t, alpha)
        elif method in ("OCBO", "OCBO-L"):
            state = state.update(x_t, y_t <= np.asarray(q_levels).reshape(-1), t)

        X = np.vstack([X, x_t])
        y = np.append(y, y_t)
        i_best = int(np.argmax(y))
        f_x = f_of(x_t) if problem.cheap_f else float("nan")
        f_inc = f_of(X[i_best])
        regret = problem.max_value - f_inc if problem.max_value is not None else float("nan")
        trace.rounds.append(RoundRecord(
            t=t, x=[float(v) for v in x_t], y=float(y_t), lower=lo_t, upper=hi_t,
            threshold=float(lam_t[0]), covered=bool(covered), acq=float(a_t),
            incumbent=float(y[i_best]), regret=float(regret), f_x=f_x, f_incumbent=f_inc,
            c=float(state.c) if method == "LOCBO" else float("nan"),
        ))

        if not needs_model:
            continue
        try:
            model = surrogate.refit(X, y)
        except Exception as exc:  # noqa: BLE001
            trace.error = f"GP refit failed at round {t}: {exc}"
            break

    trace.x_hat = X[int(np.argmax(y))]
    trace.state_json = state.to_json() if state is not None else None
    return trace


# ---------------------------------------------------------------------------
# metrics and diagnostics


def simple_regret(problem: Problem, trace: Trace) -> np.ndarray:
    """``max f - f(x_{t*})`` with t* the best observation so far.

    Element 0 is the regret after the initial design and element t the regret
    after round t, so the series has ``T + 1`` entries.
    """
    if problem.max_value is None:
        raise ValueError(f"{problem.name} has no known optimum; report capacity instead")
    X = np.vstack([trace.init_X, trace.X]) if trace.rounds else trace.init_X
    y = np.concatenate([trace.init_y, trace.y])
    n0 = len(trace.init_y)
    out = []
    for k in range(n0 - 1, len(y)):
        i = int(np.argmax(y[: k + 1]))
        out.append(problem.max_value - float(problem.f(X[i])))
    return np.array(out)


@dataclass(frozen=True)
class UtilityDiagnostic:
    fraction: float
    floor: float
    n_rounds: int


def utility_guarantee_diagnostic(trace: Trace, eps: float, b_xi: float, radius: float) -> UtilityDiagnostic:
    """Share of rounds with improvement ``>= 2 acq / (alpha eps)`` and its theoretical floor."""
    if not 0 < eps <= 1:
        raise ValueError("eps must be in (0, 1]")
    cfg = trace.config
    y_prev = np.maximum.accumulate(np.concatenate([trace.init_y, trace.y]))[len(trace.init_y) - 1 : -1]
    f_x = trace.column("f_x")
    util = np.maximum(f_x - y_prev, 0.0)
    ok = util >= 2.0 * trace.column("acq") / (cfg.alpha * eps)
    T = len(trace.rounds)
    beta = cp.coverage_beta(cfg.eta1, cfg.reg, cfg.kappa, cfg.length, radius)
    floor = 1.0 - (cfg.alpha + beta / math.sqrt(T) + cfg.kappa) / b_xi
    return UtilityDiagnostic(float(np.mean(ok)), min(floor, 1.0), T)


def with_seed(config: BoConfig, seed: int) -> BoConfig:
    return replace(config, seed=seed)
