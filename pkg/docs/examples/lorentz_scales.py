"""Frame independence of the collapse term and the scales it implies.

The rate is a ratio of energies taken in the centre-of-mass frame, so a
boost leaves it unchanged, and time dilation stretches dt while shrinking
gamma by the same factor.
"""

import numpy as np

from collapsesim import lorentz as lz

pair = lz.electron_pair(27.2, 0.0)
boosts = [lz.Boost(u) for u in (0.5, 0.9, 0.99)]
print(f"largest change of V / (M c^2) under boosts: {lz.ratio_invariance(pair, boosts):.1e}")

t = np.linspace(0, 10, 1001)
series = np.column_stack([t, np.exp(-0.5 * (t - 5) ** 2)])
for b in boosts:
    I, Ip, dev = lz.rate_integral_invariance(series, b)
    print(f"u={b.u:.2f}  gamma factor {b.gamma:6.3f}  integral {I:.6f} -> {Ip:.6f}")

ms = lz.noise_mean_square_invariance(series, lz.Boost(0.9), n_paths=400, seed=2)
print(f"E[(sum sqrt(gamma) dxi)^2]: {ms.mean_square:.3f} vs boosted {ms.mean_square_boosted:.3f}"
      f" (z={ms.z:+.2f}, expected {ms.expected:.3f})")

# %% order-of-magnitude estimates for two electrons one Bohr radius apart
est = lz.electron_estimates()
for key in ("dt_int", "temporal_discrepancy", "fraction", "nonlinearity"):
    print(f"{key:22s} {est[key]:.3e}   reference {lz.REFERENCE_ESTIMATES.get(key, float('nan')):.1e}")
