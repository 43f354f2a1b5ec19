"""Interaction-induced collapse for two distinguishable particles in 1-D.

The configuration space is an ``n x n`` grid; amplitude ``psi[i_j, i_k]``
is stored flattened as ``i_j * n + i_k`` and normalized so that
``sum |psi|^2 = 1``. The collapse operator is the interaction potential
divided by the total rest energy, its rate is the magnitude of the
Schrödinger rate of change of ``<V>`` divided by the largest ``|<V>|`` seen
since the interaction started.

Internal units have ``hbar = 1``; ``c^2`` is a scenario parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence, Union

import numpy as np

from . import constants
from .ensemble import EnsembleScenario, EnsembleStats, run_ensemble
from .integrator import CollapseTerm, Schedule, integrate_batch
from .noise import NoiseConfig
from .state import HermitianOperator, StateVector

MAX_DIM = 16_384
MAX_POINTS = 128
#: Interaction counts as "on" while |<V>| exceeds this fraction of (m_j + m_k) c^2.
ONSET_FRACTION = 1e-6
#: Default c^2 in units of the characteristic squared speed of the initial state.
C2_FACTOR = 1e4


class OnsetError(RuntimeError):
    """Rate denominator vanished while the numerator did not."""


# --- scenario description -------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    n_points: int
    spacing: float = 1.0
    boundary: Literal["periodic", "hard-wall"] = "periodic"

    def __post_init__(self):
        n = self.n_points
        if n < 2 or n > MAX_POINTS or n & (n - 1):
            raise ValueError(f"n_points must be a power of two in [2, {MAX_POINTS}], got {n}")
        if n * n > MAX_DIM:
            raise ValueError("grid too large")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if self.boundary not in ("periodic", "hard-wall"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def dim(self) -> int:
        return self.n_points ** 2

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_points) * self.spacing

    @property
    def length(self) -> float:
        return self.n_points * self.spacing

    def displacement(self, a, b):
        """``a - b`` along one axis, minimum image on a periodic grid."""
        d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
        if self.periodic:
            L = self.length
            d = d - L * np.round(d / L)
        return d

    def separation(self) -> np.ndarray:
        """r_jk = x_j - x_k on the flattened grid."""
        x = self.x
        return self.displacement(x[:, None], x[None, :]).reshape(-1)


@dataclass(frozen=True)
class SoftenedCoulomb:
    """``q_j q_k / sqrt(r^2 + eps^2)``; ``softening=None`` means two grid spacings."""

    charge_product: float = 1.0
    softening: float | None = None

    def __call__(self, r: np.ndarray, grid: GridSpec) -> np.ndarray:
        eps = 2.0 * grid.spacing if self.softening is None else self.softening
        return self.charge_product / np.sqrt(r * r + eps * eps)


@dataclass(frozen=True)
class GaussianWell:
    """``-depth * exp(-r^2 / (2 width^2))``; negative depth gives a barrier."""

    depth: float = 1.0
    width: float = 1.0

    def __call__(self, r: np.ndarray, grid: GridSpec) -> np.ndarray:
        return -self.depth * np.exp(-0.5 * (r / self.width) ** 2)


@dataclass(frozen=True)
class NoPotential:
    def __call__(self, r, grid):
        return np.zeros_like(np.asarray(r, dtype=np.float64))


Potential = Union[SoftenedCoulomb, GaussianWell, NoPotential]


@dataclass(frozen=True)
class WavePacket:
    center: float
    width: float
    momentum: float = 0.0


@dataclass(frozen=True)
class PacketPair:
    """Product of one Gaussian packet per particle."""

    j: WavePacket
    k: WavePacket


@dataclass(frozen=True)
class BranchSuperposition:
    """Weighted superposition of packet pairs (weights are probabilities).

    Grid points are assigned to the branch whose packet centre along
    ``classify_by`` is nearest; those regions define the outcome labels.
    """

    branches: tuple[PacketPair, ...]
    weights: tuple[float, ...]
    classify_by: Literal["j", "k"] = "k"
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.branches) != len(self.weights) or len(self.branches) < 2:
            raise ValueError("need at least two branches with one weight each")
        if any(w < 0 for w in self.weights) or not math.isclose(sum(self.weights), 1.0, abs_tol=1e-9):
            raise ValueError("branch weights must be nonnegative and sum to 1")

    @property
    def names(self) -> tuple[str, ...]:
        return self.labels or tuple(f"branch{i}" for i in range(len(self.branches)))


@dataclass(frozen=True)
class MomentumEigenstate:
    """``psi[i_j, i_k] = exp(2 pi i m i_k / n) g(i_j - i_k)`` on a periodic grid.

    Shifting both particles by one site multiplies the state by
    ``exp(2 pi i m / n)``: an eigenstate of total translation. ``relative``
    describes the Gaussian ``g`` in the separation coordinate.
    """

    total_index: int
    relative: WavePacket


InitialSpec = Union[PacketPair, BranchSuperposition, MomentumEigenstate]


@dataclass(frozen=True)
class InteractionScenario:
    m_j: float
    m_k: float
    potential: Potential
    initial: InitialSpec
    grid: GridSpec
    c2: float | None = None
    hbar: float = 1.0
    onset_fraction: float = ONSET_FRACTION

    def __post_init__(self):
        if not (self.m_j > 0 and self.m_k > 0):
            raise ValueError("masses must be positive")
        if self.c2 is not None and not self.c2 > 0:
            raise ValueError("c2 must be positive")
        if isinstance(self.initial, MomentumEigenstate) and not self.grid.periodic:
            raise ValueError("momentum eigenstates need a periodic grid")

    @property
    def total_mass(self) -> float:
        return self.m_j + self.m_k


# --- grid operators -------------------------------------------------------------

def _laplacian_axis(psi: np.ndarray, axis: int, grid: GridSpec) -> np.ndarray:
    """3-point second difference along ``axis`` of a ``(..., n, n)`` array."""
    x = np.moveaxis(psi, axis, -1)
    out = -2.0 * x
    out[..., 1:] += x[..., :-1]
    out[..., :-1] += x[..., 1:]
    if grid.periodic:
        out[..., 0] += x[..., -1]
        out[..., -1] += x[..., 0]
    out *= 1.0 / grid.spacing ** 2
    return np.moveaxis(out, -1, axis)


def laplacian_matrix(grid: GridSpec) -> np.ndarray:
    n = grid.n_points
    m = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
    if grid.periodic:
        m[0, -1] = m[-1, 0] = 1.0
    return m / grid.spacing ** 2


def potential_values(s: InteractionScenario) -> np.ndarray:
    """V_jk(r_jk) on the flattened grid."""
    return np.asarray(s.potential(s.grid.separation(), s.grid), dtype=np.float64)


class GridHamiltonian:
    """Matrix-free ``T_j + T_k + V`` using the same stencils as the dense
    matrix from :func:`build_hamiltonian`.

    The last result is memoized by input identity, so the rate model and the
    step share one evaluation; inputs must not be modified in place.
    """

    def __init__(self, s: InteractionScenario):
        self.grid = s.grid
        self.n = s.grid.n_points
        self.dim = s.grid.dim
        self.cj = -(s.hbar ** 2) / (2.0 * s.m_j)
        self.ck = -(s.hbar ** 2) / (2.0 * s.m_k)
        self.V = potential_values(s)
        self._memo = (None, None)

    def __getstate__(self):
        d = dict(self.__dict__)
        d["_memo"] = (None, None)
        return d

    def kinetic(self, psi: np.ndarray) -> np.ndarray:
        g = psi.reshape(psi.shape[:-1] + (self.n, self.n))
        out = self.cj * _laplacian_axis(g, -2, self.grid) + self.ck * _laplacian_axis(g, -1, self.grid)
        return out.reshape(psi.shape)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        if psi is self._memo[0]:
            return self._memo[1]
        out = self.kinetic(psi)
        out += self.V * psi
        self._memo = (psi, out)
        return out

    def norm_bound(self) -> float:
        """Upper bound on the spectral norm."""
        h2 = self.grid.spacing ** 2
        return 4.0 * (abs(self.cj) + abs(self.ck)) / h2 + float(np.max(np.abs(self.V)))

    def spectral_norm(self) -> float:
        return self.norm_bound()


def build_hamiltonian(s: InteractionScenario) -> HermitianOperator:
    """Dense ``-hbar^2/2m_j d_j^2 - hbar^2/2m_k d_k^2 + V(r_jk)``."""
    if s.grid.dim > MAX_DIM:
        raise ValueError("grid too large")
    lap = laplacian_matrix(s.grid)
    eye = np.eye(s.grid.n_points)
    h = (-(s.hbar ** 2) / (2 * s.m_j)) * np.kron(lap, eye) + (-(s.hbar ** 2) / (2 * s.m_k)) * np.kron(eye, lap)
    h = h + np.diag(potential_values(s))
    return HermitianOperator(h)


# --- initial states --------------------------------------------------------------

def _packet(grid: GridSpec, p: WavePacket, hbar: float) -> np.ndarray:
    d = grid.displacement(grid.x, p.center)
    return np.exp(-0.25 * (d / p.width) ** 2 + 1j * p.momentum * d / hbar)


def _pair(grid: GridSpec, pair: PacketPair, hbar: float) -> np.ndarray:
    v = np.outer(_packet(grid, pair.j, hbar), _packet(grid, pair.k, hbar)).reshape(-1)
    return v / np.linalg.norm(v)


def initial_state(s: InteractionScenario) -> StateVector:
    g, ini = s.grid, s.initial
    if isinstance(ini, PacketPair):
        return StateVector(_pair(g, ini, s.hbar))
    if isinstance(ini, BranchSuperposition):
        parts = [_pair(g, b, s.hbar) for b in ini.branches]
        v = sum(math.sqrt(w) * p for w, p in zip(ini.weights, parts))
        return StateVector.normalized(v)
    if isinstance(ini, MomentumEigenstate):
        n = g.n_points
        i = np.arange(n)
        rel = g.displacement(i[:, None] * g.spacing, i[None, :] * g.spacing)
        p = ini.relative
        d = g.displacement(rel, p.center)
        env = np.exp(-0.25 * (d / p.width) ** 2 + 1j * p.momentum * d / s.hbar)
        phase = np.exp(2j * np.pi * ini.total_index * i / n)[None, :]
        return StateVector.normalized((env * phase).reshape(-1))
    raise TypeError(f"unknown initial spec {ini!r}")


def branch_masks(s: InteractionScenario) -> dict[str, np.ndarray] | None:
    ini = s.initial
    if not isinstance(ini, BranchSuperposition):
        return None
    g = s.grid
    x = g.x
    centers = [getattr(b, ini.classify_by).center for b in ini.branches]
    dist = np.stack([np.abs(g.displacement(x, c)) for c in centers])
    owner = np.argmin(dist, axis=0)
    out = {}
    for i, name in enumerate(ini.names):
        line = owner == i
        m = np.outer(line, np.ones(g.n_points, bool)) if ini.classify_by == "j" else np.outer(np.ones(g.n_points, bool), line)
        out[name] = m.reshape(-1)
    return out


def characteristic_speed2(s: InteractionScenario, psi: StateVector | None = None) -> float:
    """Largest ``2 <T_p> / m_p`` of the two particles in the initial state."""
    psi = initial_state(s) if psi is None else psi
    Hg = GridHamiltonian(s)
    v = psi.amplitudes
    g = v.reshape(s.grid.n_points, s.grid.n_points)
    tj = np.vdot(g, Hg.cj * _laplacian_axis(g, 0, s.grid)).real
    tk = np.vdot(g, Hg.ck * _laplacian_axis(g, 1, s.grid)).real
    return max(2 * tj / s.m_j, 2 * tk / s.m_k)


def resolve_c2(s: InteractionScenario) -> float:
    """Explicit ``c2`` or ``C2_FACTOR`` times the characteristic squared speed."""
    if s.c2 is not None:
        return float(s.c2)
    v2 = characteristic_speed2(s)
    if not v2 > 0:
        v2 = (s.hbar / (s.grid.spacing * min(s.m_j, s.m_k))) ** 2
    return C2_FACTOR * v2


def rest_energy(s: InteractionScenario) -> float:
    return s.total_mass * resolve_c2(s)


# --- collapse operator and rate ----------------------------------------------------

def collapse_component(psi: StateVector, s: InteractionScenario) -> tuple[np.ndarray, float]:
    """``(V - <V>) psi / ((m_j + m_k) c^2)`` and its norm."""
    V = potential_values(s)
    v = psi.amplitudes
    mean = float(np.sum(V * np.abs(v) ** 2))
    out = (V - mean) * v / rest_energy(s)
    return out, float(np.linalg.norm(out))


def rate_numerator(psi: np.ndarray, s: InteractionScenario, V: np.ndarray | None = None) -> np.ndarray:
    """``| i hbar sum V [(psi* Lj psi - psi Lj psi*) / 2m_j + (same for k)] |``.

    For rows of ``psi``. With unit-sum normalization the grid sum already
    includes the cell volume. This equals ``|d<V>/dt|`` under the
    Schrödinger flow with the stencil kinetic operator.
    """
    g = s.grid
    n = g.n_points
    V = potential_values(s) if V is None else V
    a = np.asarray(psi).reshape(np.shape(psi)[:-1] + (n, n))
    cur = (np.conj(a) * _laplacian_axis(a, -2, g)).imag / s.m_j + (np.conj(a) * _laplacian_axis(a, -1, g)).imag / s.m_k
    # i hbar (2 i Im(.)) / 2 = -hbar Im(.)
    val = -s.hbar * np.sum(V.reshape(n, n) * cur, axis=(-2, -1))
    return np.abs(val)


def commutator_numerator(psi: np.ndarray, H: GridHamiltonian, hbar: float = 1.0) -> np.ndarray:
    """``|(i / hbar) <[H, V]>| = (2 / hbar) |Im <H psi | V psi>|`` for rows of ``psi``.

    Same quantity as :func:`rate_numerator`, computed from ``H psi`` so the
    integrator can reuse the evaluation needed for the step.
    """
    hp = H.apply(psi)
    return (2.0 / hbar) * np.abs(np.einsum("ni,ni->n", hp.conj(), H.V * psi).imag)


@dataclass
class RateState:
    running_max: float = 0.0
    onset_flag: bool = False
    gamma_integral: float = 0.0


class InteractionRate:
    """Variable rate for the integrator, vectorized over trajectories.

    Per trajectory state: ``running_max``, ``onset`` and, for reference
    runs, the integral of the numerator and the all-time max of ``|<V>|``.
    """

    def __init__(self, s: InteractionScenario, hamiltonian: GridHamiltonian | None = None):
        self.s = s
        self.V = potential_values(s)
        self.H = hamiltonian or GridHamiltonian(s)
        self.threshold = s.onset_fraction * rest_energy(s)
        if not self.threshold > 0:
            raise OnsetError("onset threshold must be positive")

    def start(self, n: int) -> dict:
        return {
            "running_max": np.full(n, self.threshold),
            "onset": np.zeros(n, dtype=bool),
            "numerator_integral": np.zeros(n),
            "vmax_all": np.zeros(n),
        }

    def __call__(self, psi: np.ndarray, st: dict, dt: float) -> np.ndarray:
        prob = psi.real ** 2 + psi.imag ** 2
        vabs = np.abs(prob @ self.V)
        num = commutator_numerator(psi, self.H, self.s.hbar)
        on = vabs > self.threshold
        fresh = on & ~st["onset"]
        st["running_max"][fresh] = self.threshold
        st["onset"] = on
        st["running_max"] = np.where(on, np.maximum(st["running_max"], vabs), st["running_max"])
        st["numerator_integral"] += num * dt
        st["vmax_all"] = np.maximum(st["vmax_all"], vabs)
        den = st["running_max"]
        if np.any(on & (den <= 0) & (num > 0)):
            raise OnsetError("rate denominator is zero with a nonzero numerator")
        return np.where(on, num / np.where(den > 0, den, 1.0), 0.0)


def gamma_rate(psi: StateVector, s: InteractionScenario, rs: RateState, dt: float) -> tuple[float, RateState]:
    """One evaluation of the variable rate; returns the rate and the updated state."""
    model = InteractionRate(s)
    st = model.start(1)
    st["running_max"][0] = rs.running_max if rs.onset_flag else model.threshold
    st["onset"][0] = rs.onset_flag
    g = float(model(psi.amplitudes[None, :], st, dt)[0])
    return g, RateState(float(st["running_max"][0]), bool(st["onset"][0]), rs.gamma_integral + g * dt)


def duration_estimate(V_max: float, unit_system: Literal["internal", "SI"] = "internal", hbar: float = 1.0) -> float:
    """Interaction time ``hbar / V_max``; SI takes joules and returns seconds."""
    if not V_max > 0:
        raise ValueError("V_max must be positive")
    if unit_system == "SI":
        return constants.HBAR / V_max
    if unit_system == "internal":
        return hbar / V_max
    raise ValueError(f"unknown unit system {unit_system!r}")


# --- observables ------------------------------------------------------------------

@dataclass(frozen=True)
class TotalMomentum:
    """Total-translation generator on a periodic grid.

    The 2-D FFT splits the state into sectors ``m = (a + b) mod n`` of the
    shift-both-particles operator; sector ``m`` carries total momentum
    ``hbar 2 pi m_s / (n h)`` with ``m_s`` the signed representative.
    """

    grid: GridSpec
    hbar: float = 1.0
    moment: int = 1

    def sector_weights(self, psi: np.ndarray) -> np.ndarray:
        n = self.grid.n_points
        f = np.fft.fft2(np.asarray(psi).reshape(np.shape(psi)[:-1] + (n, n)), axes=(-2, -1))
        p = f.real ** 2 + f.imag ** 2
        a = np.arange(n)
        sector = (a[:, None] + a[None, :]) % n
        w = np.zeros(np.shape(psi)[:-1] + (n,))
        for m in range(n):
            w[..., m] = np.sum(p[..., sector == m], axis=-1)
        return w / np.sum(w, axis=-1, keepdims=True)

    def values(self) -> np.ndarray:
        n = self.grid.n_points
        m = np.arange(n)
        ms = np.where(m < n // 2, m, m - n)
        return self.hbar * 2 * np.pi * ms / (n * self.grid.spacing)

    def __call__(self, psi):
        w = self.sector_weights(psi)
        return w @ (self.values() ** self.moment)


def momentum_variance(psi: np.ndarray, grid: GridSpec, hbar: float = 1.0) -> np.ndarray:
    P = TotalMomentum(grid, hbar)
    w = P.sector_weights(psi)
    p = P.values()
    mean = w @ p
    return np.maximum(w @ (p * p) - mean * mean, 0.0)


@dataclass(frozen=True)
class MomentumVariance:
    grid: GridSpec
    hbar: float = 1.0

    def __call__(self, psi):
        return momentum_variance(psi, self.grid, self.hbar)


class EnergyExpectation:
    def __init__(self, s: InteractionScenario):
        self.H = GridHamiltonian(s)

    def __call__(self, psi):
        return np.einsum("ni,ni->n", psi.conj(), self.H.apply(psi)).real


@dataclass(frozen=True)
class PotentialExpectation:
    V: np.ndarray = field(repr=False)

    def __call__(self, psi):
        return (psi.real ** 2 + psi.imag ** 2) @ self.V

    def __hash__(self):
        return id(self)


def scenario_observables(s: InteractionScenario) -> dict:
    obs = {"V": PotentialExpectation(potential_values(s)), "H": EnergyExpectation(s)}
    if s.grid.periodic:
        obs["P"] = TotalMomentum(s.grid, s.hbar)
        obs["P_var"] = MomentumVariance(s.grid, s.hbar)
    return obs


# --- simulation ---------------------------------------------------------------------

def collapse_term(s: InteractionScenario, *, enabled: bool = True,
                  hamiltonian: GridHamiltonian | None = None) -> CollapseTerm:
    """The single-pair collapse channel: operator ``V / (M c^2)``, variable rate.

    ``enabled=False`` keeps the rate bookkeeping but zeroes the strength, so
    the state follows the Schrödinger equation exactly.
    """
    op = HermitianOperator.diagonal(potential_values(s) / rest_energy(s))
    return CollapseTerm(op, 1.0 if enabled else 0.0, InteractionRate(s, hamiltonian))


def default_dt(s: InteractionScenario, scale: float = 1e-3) -> float:
    return scale * s.hbar / GridHamiltonian(s).norm_bound()


def measurement_scenario(s: InteractionScenario, *, collapse: bool = True, threshold: float | None = None) -> EnsembleScenario:
    masks = branch_masks(s)
    if threshold is None and masks is not None:
        from .integrator import COMPLETION_THRESHOLD

        threshold = COMPLETION_THRESHOLD
    H = GridHamiltonian(s)
    return EnsembleScenario(
        initial_state(s).amplitudes,
        H,
        (collapse_term(s, enabled=collapse, hamiltonian=H),),
        branches=masks,
        threshold=threshold if masks is not None else None,
        observables=scenario_observables(s),
        hbar=s.hbar,
    )


LEDGER_COLUMNS = ("t", "norm", "V", "gamma", "gamma_integral", "P", "H")


@dataclass
class MeasurementResult:
    stats: EnsembleStats
    initial_weights: dict[str, float]
    c2: float
    onset_threshold: float

    @property
    def outcome_table(self) -> dict:
        return {
            "counts": self.stats.outcome_counts,
            "unresolved": self.stats.unresolved,
            "failed": self.stats.failed,
            "initial_weights": self.initial_weights,
        }

    def ledger(self) -> dict[str, np.ndarray]:
        """Ensemble-mean conservation ledger keyed by :data:`LEDGER_COLUMNS`."""
        st = self.stats
        out = {"t": st.times}
        for col in LEDGER_COLUMNS[1:]:
            out[col] = st.mean(col) if col in st.sums else np.full(st.times.shape, np.nan)
        return out

    def ledger_stderr(self) -> dict[str, np.ndarray]:
        st = self.stats
        return {col: st.stderr(col) for col in LEDGER_COLUMNS[1:] if col in st.sums}


def simulate_measurement(s: InteractionScenario, n_traj: int, seed: int, schedule: Schedule, *,
                         threshold: float | None = None, workers: int | None = 1) -> MeasurementResult:
    """Integrate the interaction collapse equation for an ensemble."""
    sc = measurement_scenario(s, threshold=threshold)
    stats = run_ensemble(sc, n_traj, seed, schedule, workers=workers)
    masks = branch_masks(s)
    psi0 = initial_state(s)
    weights = {}
    if masks:
        p = psi0.probabilities()
        weights = {k: float(p[m].sum()) for k, m in masks.items()}
    return MeasurementResult(stats, weights, resolve_c2(s), s.onset_fraction * rest_energy(s))


@dataclass
class ReferenceRun:
    times: np.ndarray
    series: dict[str, np.ndarray]
    gamma_integral: float
    retrospective_integral: float
    vmax: float
    states: np.ndarray | None


def reference_run(s: InteractionScenario, schedule: Schedule, *, keep_states: bool = False,
                  collapse: bool = False, seed: int = 0, trajectory_index: int = 0) -> ReferenceRun:
    """Single trajectory with the rate bookkeeping switched on.

    With ``collapse=False`` this is the pure Schrödinger reference: the
    collapse term has strength zero and contributes exactly nothing.
    Returns the causal (running-max) rate integral and the retrospective
    one, which divides the accumulated numerator by the all-time max.
    """
    H = GridHamiltonian(s)
    term = collapse_term(s, enabled=collapse, hamiltonian=H)
    rate: InteractionRate = term.rate
    captured = {}

    class _Capture:
        def start(self, n):
            st = rate.start(n)
            captured["st"] = st
            return st

        def __call__(self, psi, st, dt):
            captured["st"] = st
            return rate(psi, st, dt)

    term = replace(term, rate=_Capture())
    res = integrate_batch(
        initial_state(s), H, [term], schedule,
        NoiseConfig(seed, schedule.dt, trajectory_index=trajectory_index), [trajectory_index],
        threshold=None, observables=scenario_observables(s), keep_states=keep_states, hbar=s.hbar,
    )
    st = captured["st"]
    series = {k: v[:, 0] for k, v in res.series.items()}
    vmax = float(st["vmax_all"][0])
    retro = float(st["numerator_integral"][0] / vmax) if vmax > 0 else 0.0
    return ReferenceRun(res.times, series, float(series["gamma_integral"][-1]), retro, vmax,
                        None if res.states is None else res.states[:, 0])


def amplitude_independence(s: InteractionScenario, weights: Sequence[float], schedule: Schedule) -> dict:
    """Rate series of the Schrödinger reference for several weights of the
    interacting branch (branch 0 of a :class:`BranchSuperposition`).

    Returns the series per weight and the largest deviation from the first
    weight's series, relative to that series' peak, over the window where
    it exceeds 1e-3 of its peak. A pointwise ratio is not used: the rate is
    an absolute value and passes through zero inside the window.
    """
    if not isinstance(s.initial, BranchSuperposition) or len(s.initial.branches) != 2:
        raise ValueError("need a two-branch superposition")
    out = {}
    for w in weights:
        sw = replace(s, initial=replace(s.initial, weights=(w, 1.0 - w)))
        out[w] = reference_run(sw, schedule).series["gamma"]
    base = out[weights[0]]
    win = base > 1e-3 * base.max()
    peak = float(base.max())
    dev = max(float(np.max(np.abs(out[w][win] - base[win]))) / peak for w in weights)
    return {"series": out, "max_relative_deviation": dev, "window": win}


# --- reference scenarios ----------------------------------------------------------

def reference_scattering(n_points: int = 32, c2: float | None = None) -> InteractionScenario:
    """Two unit-mass packets colliding head-on through a Gaussian well."""
    n = n_points
    return InteractionScenario(
        1.0, 1.0, GaussianWell(1.0, 1.5),
        PacketPair(WavePacket(n / 4, 2.0, 1.0), WavePacket(3 * n / 4, 2.0, -1.0)),
        GridSpec(n, 1.0, "periodic"), c2=c2,
    )


def two_branch_detector(weight: float = 0.7, coupling: float = 8.0, *, width: float = 3.0,
                        separation: float = 4.0) -> InteractionScenario:
    """Two packet-pair branches on a 16-point hard-wall grid.

    In ``interacting`` the packets close in on each other inside a wide
    well; in ``idle`` particle k sits far away, so ``<V>`` barely changes.
    ``c2`` is chosen so that ``|V(0)| / (M c^2) = coupling``.
    """
    x0 = 7.0 - separation / 2
    ini = BranchSuperposition(
        (PacketPair(WavePacket(x0, 0.8, 0.5), WavePacket(x0 + separation, 0.8, -0.5)),
         PacketPair(WavePacket(x0, 0.8, 0.5), WavePacket(14.0, 0.8, 0.0))),
        (weight, 1.0 - weight), classify_by="k", labels=("interacting", "idle"),
    )
    base = InteractionScenario(1.0, 1.0, GaussianWell(1.0, width), ini, GridSpec(16, 1.0, "hard-wall"), c2=1.0)
    v_peak = GaussianWell(1.0, width)(np.array(0.0), base.grid)
    return replace(base, c2=float(abs(v_peak)) / (coupling * base.total_mass))


def amplitude_probe(weight: float = 0.5) -> InteractionScenario:
    """Interacting and idle branches on a 32-point hard-wall grid.

    The idle partner sits 20 sites from particle j, far enough that its
    branch stays outside the well's range for the whole collision.
    """
    ini = BranchSuperposition(
        (PacketPair(WavePacket(8.0, 1.2, 0.5), WavePacket(13.0, 1.2, -0.5)),
         PacketPair(WavePacket(8.0, 1.2, 0.5), WavePacket(28.0, 1.2, 0.0))),
        (weight, 1.0 - weight), classify_by="k", labels=("interacting", "idle"),
    )
    return InteractionScenario(1.0, 1.0, GaussianWell(1.0, 1.5), ini, GridSpec(32, 1.0, "hard-wall"), c2=1.0)
