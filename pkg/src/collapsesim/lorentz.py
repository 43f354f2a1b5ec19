"""Special-relativistic bookkeeping for the collapse term (1-D, c = 1).

Energies are in any consistent unit (eV throughout the helpers here),
velocities are fractions of c and momenta are energy units. The SI layer is
limited to :func:`scale_estimates`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import constants
from .noise import NoiseConfig, NoiseStream

#: Rest energy of the electron in eV.
ELECTRON_EV = constants.M_E * constants.C ** 2 / constants.EV

#: Rounded order-of-magnitude figures commonly quoted for this model, kept
#: next to the computed values so both can be reported together.
REFERENCE_ESTIMATES = {
    "dt_int": 2.5e-17,
    "temporal_discrepancy": 1e-18,
    "positional_discrepancy": 1e-12,
    "fraction": 0.01,
    "nonlinearity": 1e-9,
}


def lorentz_factor(v: float) -> float:
    v = float(v)
    if not abs(v) < 1.0:
        raise ValueError(f"|v| must be < 1, got {v!r}")
    if v == 0.0:
        return 1.0
    return 1.0 / math.sqrt((1.0 - v) * (1.0 + v))


@dataclass(frozen=True)
class Boost:
    u: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and abs(self.u) < 1.0):
            raise ValueError(f"boost velocity must satisfy |u| < 1, got {self.u!r}")

    @property
    def gamma(self) -> float:
        return lorentz_factor(self.u)

    def inverse(self) -> "Boost":
        return Boost(-self.u)


@dataclass(frozen=True)
class RelativisticPair:
    m_j: float
    m_k: float
    v_j: float
    v_k: float
    V: float = 0.0

    def __post_init__(self):
        if not (self.m_j > 0 and self.m_k > 0):
            raise ValueError("rest masses must be positive (massless systems are out of scope)")
        for v in (self.v_j, self.v_k):
            if not abs(v) < 1.0:
                raise ValueError(f"|v| must be < 1, got {v!r}")

    @classmethod
    def center_of_mass(cls, m_j: float, m_k: float, v_j: float, V: float = 0.0) -> "RelativisticPair":
        """Pair with ``v_k`` chosen so the total momentum vanishes."""
        p = m_j * lorentz_factor(v_j) * v_j
        # m_k G(v_k) v_k = -p  =>  v_k = -p / sqrt(m_k^2 + p^2)
        v_k = -p / math.hypot(m_k, p)
        return cls(m_j, m_k, v_j, v_k, V)

    def four_momenta(self) -> np.ndarray:
        """Rows ``(E, p)`` for particle j and particle k."""
        out = []
        for m, v in ((self.m_j, self.v_j), (self.m_k, self.v_k)):
            g = lorentz_factor(v)
            out.append((g * m, g * m * v))
        return np.array(out)

    @property
    def total_momentum(self) -> float:
        fm = self.four_momenta()
        return float(fm[0, 1] + fm[1, 1])


def electron_pair(V: float = constants.HARTREE_EV, v: float = 0.0) -> RelativisticPair:
    """Two electrons (eV units) moving with opposite velocities ``+-v``."""
    return RelativisticPair(ELECTRON_EV, ELECTRON_EV, v, -v, V)


def total_energy(p: RelativisticPair) -> float:
    """Rest plus kinetic energy of both systems plus the interaction energy."""
    return p.m_j * lorentz_factor(p.v_j) + p.m_k * lorentz_factor(p.v_k) + p.V


def boost_energy(E: float, p_par: float, b: Boost) -> float:
    """Time component of the boosted energy-momentum vector."""
    if not (math.isfinite(E) and math.isfinite(p_par)):
        raise ValueError("energy and momentum must be finite")
    return b.gamma * (E - b.u * p_par)


def boost_four_vector(E, p_par, b: Boost):
    """Full 1-D boost ``(E, p) -> (G (E - u p), G (p - u E))``; accepts arrays."""
    g = b.gamma
    E = np.asarray(E, dtype=np.float64)
    p = np.asarray(p_par, dtype=np.float64)
    return g * (E - b.u * p), g * (p - b.u * E)


def ratio_invariance(p: RelativisticPair, boosts: Sequence[Boost], tol: float = 1e-12) -> float:
    """Largest relative change of ``V / E_total`` under the given boosts.

    Each boost is evaluated by scaling both energies by the Lorentz factor
    and by boosting the four-momenta of the particles one by one, the
    interaction energy being the time component of ``(V, 0)``.
    """
    fm = p.four_momenta()
    scale = max(1.0, float(np.max(np.abs(fm[:, 1]))))
    if abs(p.total_momentum) > tol * scale:
        raise ValueError(f"pair is not in its centre-of-mass frame: total momentum {p.total_momentum!r}")
    E = total_energy(p)
    ref = p.V / E
    worst = 0.0
    for b in boosts:
        g = b.gamma
        ratio_a = (g * p.V) / (g * E)
        E_parts, _ = boost_four_vector(fm[:, 0], fm[:, 1], b)
        V_b = boost_energy(p.V, 0.0, b)
        ratio_b = V_b / (float(E_parts.sum()) + V_b)
        for r in (ratio_a, ratio_b):
            dev = abs(r - ref) / abs(ref) if ref != 0 else abs(r - ref)
            worst = max(worst, dev)
    return worst


def _check_series(gamma_series) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(gamma_series, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError("gamma_series must be a nonempty list of (t, gamma) pairs")
    t, g = arr[:, 0], arr[:, 1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    return t, g


def rate_integral_invariance(gamma_series, b: Boost) -> tuple[float, float, float]:
    """Trapezoidal rate integrals in both frames, with ``t' = G t`` and
    ``gamma' = gamma / G``; returns ``(I, I', |I' - I| / |I|)``."""
    t, g = _check_series(gamma_series)
    G = b.gamma
    I = float(np.trapezoid(g, t)) if len(t) > 1 else 0.0
    Ip = float(np.trapezoid(g / G, t * G)) if len(t) > 1 else 0.0
    dev = abs(Ip - I) / abs(I) if I != 0 else abs(Ip - I)
    return I, Ip, dev


@dataclass(frozen=True)
class MeanSquareCheck:
    mean_square: float
    mean_square_boosted: float
    stderr: float
    z: float
    expected: float

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 5.0


def noise_mean_square_invariance(gamma_series, b: Boost, n_paths: int = 1000, seed: int = 0) -> MeanSquareCheck:
    """Compare ``E[(sum sqrt(gamma) dxi)^2]`` between frames by Monte Carlo.

    Unprimed increments have variance ``dt``, primed ones ``G dt`` and the
    primed rates are ``gamma / G``. Independent noise paths are used for the
    two frames; both means should equal the rate integral.
    """
    t, g = _check_series(gamma_series)
    if t.size < 2:
        raise ValueError("need at least two samples")
    dt = np.diff(t)
    gm = 0.5 * (g[1:] + g[:-1])
    G = b.gamma

    def sums(first_index: int, rates, widths):
        out = np.empty(n_paths)
        for i in range(n_paths):
            z = NoiseStream(NoiseConfig(seed, 1.0, trajectory_index=first_index + i)).next(widths.size)
            out[i] = np.sum(np.sqrt(rates) * np.sqrt(widths) * z)
        return out ** 2

    s = sums(0, gm, dt)
    sp = sums(n_paths, gm / G, dt * G)
    se = math.sqrt((s.var(ddof=1) + sp.var(ddof=1)) / n_paths)
    z = (sp.mean() - s.mean()) / se if se > 0 else 0.0
    return MeanSquareCheck(float(s.mean()), float(sp.mean()), se, float(z), float(np.sum(gm * dt)))


def scale_estimates(separation: float, V_max: float, m_j: float, m_k: float, v_max: float) -> dict[str, float]:
    """SI order-of-magnitude estimates (metres, joules, kilograms, m/s)."""
    for name, val in (("separation", separation), ("V_max", V_max), ("m_j", m_j), ("m_k", m_k), ("v_max", v_max)):
        if not (val > 0 and math.isfinite(val)):
            raise ValueError(f"{name} must be positive, got {val!r}")
    temporal = separation / constants.C
    positional = v_max * temporal
    return {
        "dt_int": constants.HBAR / V_max,
        "temporal_discrepancy": temporal,
        "positional_discrepancy": positional,
        "fraction": positional / separation,
        "nonlinearity": (V_max / ((m_j + m_k) * constants.C ** 2)) ** 2,
    }


def electron_estimates(V_ev: float = constants.HARTREE_EV, separation: float = 1e-10, v_max: float = 1e6) -> dict[str, float]:
    return scale_estimates(separation, V_ev * constants.EV, constants.M_E, constants.M_E, v_max)


def order_of_magnitude_agrees(a: float, b: float) -> bool:
    return abs(math.log10(a / b)) <= 1.0
