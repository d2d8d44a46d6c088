"""Fit a GP to noisy 1-d data and watch localized online CP repair its intervals.

The GP is given hyperparameters that understate the noise, so its native 80%
intervals cover far too rarely. Streaming fresh observations through the
localized threshold update widens the intervals until long-run miscoverage
settles near the 20% target.

    python3 demos/01_gp_and_conformal_interval.py
"""

import numpy as np

from locbo import conformal as cp
from locbo.gp import GpModel, KernelParams
from locbo.problems import make_synthetic1d, observe

ALPHA = 0.2

problem = make_synthetic1d("hetero")
rng = np.random.default_rng(0)

X0 = problem.sample_uniform(rng, 25)
y0 = np.array([observe(problem, x, rng) for x in X0])
gp = GpModel.fit(X0, y0, KernelParams(length_scale=0.8, noise_variance=0.01, output_scale=4.0))

tf = cp.ThresholdFunction.initial(ALPHA, kappa=2.0, length=1.0, reg=4e-3, eta1=0.05, w=0.0)
misses = []
for t in range(1, 1501):
    x = problem.sample_uniform(rng, 1)[0]
    y = observe(problem, x, rng)
    iv = cp.interval(gp.predictive_observation(x), cp.eval_threshold(tf, x))
    covered = iv.lower <= y <= iv.upper
    misses.append(not covered)
    tf = cp.locp_update(tf, x, covered, t, ALPHA)
    if t in (10, 100, 500, 1500):
        print(f"t={t:5d}  running miscoverage {np.mean(misses):.3f}  offset c={tf.c:+.3f}")

# the learned threshold is input dependent: smaller (wider intervals) where noise is larger
for x in (0.0, 2.5, 4.9):
    print(f"lambda({x:+.1f}) = {cp.eval_threshold(tf, np.array([x])):.3f}")
