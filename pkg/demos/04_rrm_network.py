"""Tune per-base-station power and tilt in the UAV cellular network.

Each round tunes one base station's (power, tilt) pair while the others stay
at the incumbent configuration; the oracle is the noisy one-channel capacity
estimate and the reported value is the Monte-Carlo ground truth.

    python3 demos/04_rrm_network.py
"""

import numpy as np

from locbo import optimizer as opt
from locbo import rrm

layout = rrm.make_layout()
print(f"{layout.n_users} users, UAVs served per BS: {np.bincount(layout.association[layout.is_uav], minlength=9)}")

default = rrm.RadioConfig.uniform(46.0, 12.0)
print(f"all BSs at 46 dBm / 12 deg: capacity {rrm.capacity_objective(layout, default):.4f} bit/s/Hz")

problem = rrm.make_rrm_problem(layout)
for method in ("LOCBO", "RS"):
    tr = opt.run(problem, opt.rrm_config(method, T=27, seed=0))
    best = rrm.decode(tr.x_hat)
    print(f"{method:>5s}: capacity {tr.rounds[-1].f_incumbent:.4f} after 3 sweeps; "
          f"powers {np.round(best.powers_dbm).astype(int)} tilts {np.round(best.tilts_deg).astype(int)}")
