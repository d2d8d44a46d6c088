"""Multi-seed experiment runner, summaries and coverage audits.

An experiment spec is a JSON object::

    {
      "problem": "ackley2d-hetero",
      "methods": ["LOCBO", {"label": "LOCBO-linf", "method": "LOCBO", "length": "inf"}, "RS"],
      "config": {"T": 50},
      "overrides": {"LOCBO": {"kappa": 4.0}},
      "n_trials": 7,
      "seed": 0,
      "out": "results/ackley"
    }

``config`` applies to every method, ``overrides`` is keyed by run label, and a
method entry may itself be an object carrying a label plus overrides. Trial
``k`` runs with seed ``seed + k``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import conformal as cp
from .optimizer import METHODS, BoConfig, Trace, rrm_config, run, synthetic_config
from .problems import Problem, make_ackley2d, make_synthetic1d

GAUSSIAN_B_XI = 0.5
CI_PERCENTILES = (15.0, 85.0)


def _rrm_problem() -> Problem:
    from .rrm import make_rrm_problem

    return make_rrm_problem()


# name -> (problem builder, default config factory)
PROBLEMS: dict[str, tuple[Callable[[], Problem], Callable[..., BoConfig]]] = {
    "ackley2d": (lambda: make_ackley2d("none"), synthetic_config),
    "ackley2d-homo": (lambda: make_ackley2d("homo"), synthetic_config),
    "ackley2d-hetero": (lambda: make_ackley2d("hetero"), synthetic_config),
    "synthetic1d": (lambda: make_synthetic1d("none"), synthetic_config),
    "synthetic1d-hetero": (lambda: make_synthetic1d("hetero"), synthetic_config),
    "rrm-uav": (_rrm_problem, rrm_config),
}


def registry() -> dict:
    return {"problems": sorted(PROBLEMS), "methods": list(METHODS)}


def make_problem(name: str) -> Problem:
    if name not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; registered problems: {sorted(PROBLEMS)}")
    return PROBLEMS[name][0]()


@dataclass
class ExperimentSpec:
    problem: str
    methods: list
    config: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    n_trials: int = 7
    seed: int = 0
    out: str = "results"

    def __post_init__(self):
        if not self.methods:
            raise ValueError("methods must be non-empty")
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if self.problem not in PROBLEMS:
            raise KeyError(f"unknown problem {self.problem!r}; registered problems: {sorted(PROBLEMS)}")
        labels = [lbl for lbl, _ in self.entries()]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate run labels {labels}")
        self.resolved()  # validates every config

    def entries(self) -> list:
        """``(label, overrides)`` pairs in declaration order."""
        out = []
        for m in self.methods:
            if isinstance(m, str):
                out.append((m, {"method": m}))
            else:
                m = dict(m)
                label = m.pop("label", m.get("method"))
                out.append((label, m))
        for label, m in out:
            if m.get("method") not in METHODS:
                raise KeyError(f"unknown method {m.get('method')!r}; registered methods: {list(METHODS)}")
        return out

    def resolved(self) -> dict:
        """Fully resolved config per label (seed left at the base seed)."""
        factory = PROBLEMS[self.problem][1]
        res = {}
        for label, m in self.entries():
            kw = dict(self.config)
            kw.update({k: v for k, v in m.items() if k != "method"})
            kw.update(self.overrides.get(label, {}))
            if "length" in kw:
                kw["length"] = float(kw["length"])
            kw["seed"] = self.seed
            kw["label"] = label
            res[label] = factory(m["method"], **kw)
        return res

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "methods": self.methods,
            "config": self.config,
            "overrides": self.overrides,
            "n_trials": self.n_trials,
            "seed": self.seed,
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        known = {"problem", "methods", "config", "overrides", "n_trials", "seed", "out"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown spec keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentSpec:
        """Read a spec file, or the ``spec`` section of a results manifest."""
        d = json.loads(Path(path).read_text())
        if "spec" in d and "code_version" in d:
            d = d["spec"]
        return cls.from_dict(d)


def metric_column(problem: Problem) -> str:
    return "regret" if problem.max_value is not None else "f_incumbent"


def ci70(values) -> tuple[float, float]:
    lo, hi = np.percentile(np.asarray(values, dtype=float), CI_PERCENTILES)
    return float(lo), float(hi)


def summarize(series: dict) -> list:
    """Rows ``(label, round, mean, ci_lo, ci_hi)`` from ``{label: [per-trial arrays]}``."""
    rows = []
    for label, runs in series.items():
        runs = [np.asarray(r, dtype=float) for r in runs if len(r)]
        if not runs:
            continue
        n = min(len(r) for r in runs)
        M = np.vstack([r[:n] for r in runs])
        for k in range(n):
            lo, hi = ci70(M[:, k])
            rows.append((label, k + 1, float(np.mean(M[:, k])), lo, hi))
    return rows


def _write_summary(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "round", "mean", "ci_lo", "ci_hi"])
        for label, k, m, lo, hi in rows:
            w.writerow([label, k, repr(m), repr(lo), repr(hi)])


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV as float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}


@dataclass
class Summary:
    out: Path
    rows: list
    terminal: dict
    failures: list
    traces: dict


def _trace_path(out: Path, label: str, trial: int, ext: str) -> Path:
    return out / "traces" / f"{label}_trial{trial:02d}.{ext}"


def run_experiment(spec: ExperimentSpec, force: bool = False) -> Summary:
    """Run every (method, trial) pair and persist traces, summary and manifest.

    Raises:
        FileExistsError: results already exist in ``spec.out`` and ``force`` is off.
    """
    out = Path(spec.out)
    if (out / "manifest.json").exists() and not force:
        raise FileExistsError(f"{out} already holds results; pass force=True (--force) to overwrite")
    (out / "traces").mkdir(parents=True, exist_ok=True)

    problem = make_problem(spec.problem)
    metric = metric_column(problem)
    configs = spec.resolved()
    series: dict = {label: [] for label in configs}
    terminal: dict = {label: [] for label in configs}
    traces: dict = {}
    failures = []
    for label, base in configs.items():
        for k in range(spec.n_trials):
            cfg = BoConfig.from_dict({**base.to_dict(), "seed": spec.seed + k})
            try:
                tr = run(problem, cfg)
            except Exception as exc:  # noqa: BLE001 - one failed trial must not stop the sweep
                failures.append({"label": label, "trial": k, "error": repr(exc)})
                continue
            if tr.error:
                failures.append({"label": label, "trial": k, "error": tr.error})
            traces[(label, k)] = tr
            _trace_path(out, label, k, "csv").write_text(tr.to_csv())
            _trace_path(out, label, k, "json").write_text(tr.to_json())
            vals = tr.column(metric)
            series[label].append(vals)
            if len(vals):
                terminal[label].append(float(vals[-1]))

    rows = summarize(series)
    _write_summary(out / "summary.csv", rows)
    with open(out / "terminal.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "trial", metric])
        for label, vals in terminal.items():
            for k, v in enumerate(vals):
                w.writerow([label, k, repr(v)])

    manifest = {
        "code_version": __version__,
        "spec": spec.to_dict(),
        "metric": metric,
        "resolved": {label: c.to_dict() for label, c in configs.items()},
        "trial_seeds": [spec.seed + k for k in range(spec.n_trials)],
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Summary(out, rows, terminal, failures, traces)


# ---------------------------------------------------------------------------
# coverage audit


@dataclass(frozen=True)
class AuditRow:
    label: str
    trial: int
    T: int
    y_miscoverage: float
    lemma1_bound: float
    f_miscoverage: float
    lemma2_bound: float
    b_xi: float

    @property
    def lemma1_ok(self) -> bool:
        return self.y_miscoverage <= self.lemma1_bound

    @property
    def lemma2_ok(self) -> bool:
        return math.isnan(self.f_miscoverage) or self.f_miscoverage <= self.lemma2_bound


def audit_trace(trace_json: dict, radius: float, label: str = "", trial: int = 0,
                b_xi: float = GAUSSIAN_B_XI) -> AuditRow:
    cfg = BoConfig.from_dict(trace_json["config"])
    rounds = trace_json["rounds"]
    T = len(rounds)
    y = np.array([r["y"] for r in rounds])
    lo = np.array([r["lower"] for r in rounds])
    hi = np.array([r["upper"] for r in rounds])
    fx = np.array([r["f_x"] if r["f_x"] is not None else np.nan for r in rounds], dtype=float)
    ya = cp.coverage_audit(y, lo, hi, cfg.alpha, cfg.eta1, cfg.reg, cfg.kappa, cfg.length, radius)
    if np.all(np.isfinite(fx)) and T:
        f_rate = float(np.mean((fx < lo) | (fx > hi)))
    else:
        f_rate = float("nan")
    return AuditRow(label, trial, T, ya.miscoverage_rate, ya.bound, f_rate, ya.bound / b_xi, b_xi)


def audit_report(results_dir) -> list:
    """Coverage table for every conformal run stored in ``results_dir``."""
    results_dir = Path(results_dir)
    manifest = json.loads((results_dir / "manifest.json").read_text())
    problem = make_problem(manifest["spec"]["problem"])
    rows = []
    for label, cfg in manifest["resolved"].items():
        if cfg["method"] not in ("LOCBO", "OCBO", "OCBO-L"):
            continue
        for k in range(len(manifest["trial_seeds"])):
            path = _trace_path(results_dir, label, k, "json")
            if not path.exists():
                continue
            rows.append(audit_trace(json.loads(path.read_text()), problem.diagonal, label, k))
    return rows


def write_audit(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "trial", "T", "y_miscoverage", "lemma1_bound", "lemma1_ok",
                    "f_miscoverage", "lemma2_bound", "lemma2_ok", "b_xi"])
        for r in rows:
            w.writerow([r.label, r.trial, r.T, repr(r.y_miscoverage), repr(r.lemma1_bound),
                        int(r.lemma1_ok), repr(r.f_miscoverage), repr(r.lemma2_bound),
                        int(r.lemma2_ok), r.b_xi])


def resolve_out(spec_out: str, cli_out: str | None) -> str:
    """``--out`` beats ``LOCBO_OUT`` which beats the spec's own ``out``."""
    if cli_out:
        return cli_out
    return os.environ.get("LOCBO_OUT") or spec_out
