"""Collapse driven by an interaction on a one-dimensional grid.

Two particles share a 16-site ring with a Gaussian attraction. The collapse
rate is the normalized rate of change of <V>, so it switches on only while
the packets meet. Total momentum commutes with the collapse operator and
stays a martingale.
"""

import numpy as np

from collapsesim import interaction as ia
from collapsesim.integrator import Schedule

s = ia.reference_scattering(16)
print(f"c^2 = {ia.resolve_c2(s):.3g} (default: 1e4 x max 2<T>/m)")

# %% single Schrodinger reference with the rate bookkeeping on
dt = ia.default_dt(s)
n = int(round(8.0 / dt))
ref = ia.reference_run(s, Schedule(dt, n, n // 40))
print(f"integrated rate: causal {ref.gamma_integral:.2f}, retrospective {ref.retrospective_integral:.2f}")
for t, g in zip(ref.times[::5], ref.series["gamma"][::5]):
    print(f"  t={t:5.2f}  gamma={g:7.3f}  " + "#" * int(20 * g / ref.series["gamma"].max()))

# %% a small ensemble with collapse switched on
m = ia.simulate_measurement(ia.reference_scattering(16, c2=0.5), 50, 1, Schedule(1e-3, 1000, 100))
led = m.ledger()
se = m.ledger_stderr()
print("t      <P>        SE")  # <P> is not exactly zero: the packets are truncated Gaussians on a lattice
for t, p, e in zip(led["t"], led["P"], np.r_[0.0, se["P"][1:]]):
    print(f"{t:5.2f}  {p:+.7f}  {e:.1e}")
