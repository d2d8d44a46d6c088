"""Run LOCBO, vanilla BO and random search on the noisy 2-d Ackley function.

Prints the simple regret after each tenth round and the coverage audit of
the LOCBO run.

    python3 demos/03_locbo_on_ackley.py
"""

import numpy as np

from locbo import conformal as cp
from locbo import optimizer as opt
from locbo.problems import make_ackley2d

problem = make_ackley2d("hetero")
traces = {m: opt.run(problem, opt.synthetic_config(m, T=40, seed=1)) for m in ("LOCBO", "BO", "RS")}

print("round  " + "  ".join(f"{m:>8s}" for m in traces))
for t in range(10, 41, 10):
    print(f"{t:5d}  " + "  ".join(f"{tr.rounds[t - 1].regret:8.3f}" for tr in traces.values()))

tr = traces["LOCBO"]
cfg = tr.config
audit = cp.coverage_audit(tr.y, tr.column("lower"), tr.column("upper"), cfg.alpha, cfg.eta1,
                          cfg.reg, cfg.kappa, cfg.length, problem.diagonal)
print(f"LOCBO miscoverage {audit.miscoverage_rate:.3f} (target {cfg.alpha}), bound {audit.bound:.3g}")
print(f"final query x_hat = {np.round(tr.x_hat, 3)}")
