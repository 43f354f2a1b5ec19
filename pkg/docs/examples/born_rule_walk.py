"""Born statistics from a collapsing two-level state.

A qubit starts in sqrt(1 - b2)|x> + sqrt(b2)|y> and evolves under the
collapse term alone. The weight |<y|psi>|^2 performs an unbiased random
walk on [0, 1], so the fraction of trajectories ending in |y> estimates b2.
"""

import math

import numpy as np

from collapsesim import TwoLevelSpec, born_experiment, gambler_ruin_oracle
from collapsesim.twolevel import CappedRandomStep, born_verdict

b2 = 0.3
spec = TwoLevelSpec.from_beta2(b2)

# %% the walk in isolation: a bounded martingale absorbed at 0 or 1
walk = gambler_ruin_oracle(b2, CappedRandomStep(0.1), n_walks=5000, seed=0)
print(f"discrete walk absorbed at 1: {walk:.3f}  (start {b2})")

# %% the full stochastic Schrodinger evolution
counts = born_experiment(spec, 2000, seed=0)
se = math.sqrt(b2 * (1 - b2) / 2000)
print(f"trajectories ending in |y>: {counts.count_y} / {counts.n_traj}"
      f"  ->  {counts.frequency_y:.3f} +- {se:.3f}")
print(f"unresolved after {counts.n_steps} steps of dt={counts.dt:g}: {counts.unresolved}")
print("binomial test:", "pass" if born_verdict(counts, spec).passed else "fail")

# %% the ensemble mean of the weight never moves
w = counts.stats.mean("w_y")
print("mean weight at sampled times:", np.round(w[::10], 3))
