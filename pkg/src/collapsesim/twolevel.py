"""Two-state collapse: tangent decomposition, arc coordinate, the
gambler's-ruin absorption theorem and Monte Carlo Born-rule experiments.

The state ``alpha|x> + beta|y>`` (real, nonnegative amplitudes) is driven
along the quarter arc between the eigenstates of ``O = diag(a, b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleScenario, EnsembleStats, born_test, run_ensemble
from .integrator import COMPLETION_THRESHOLD, CollapseTerm, Schedule, STEP_SCALE
from .state import HermitianOperator, StateVector

#: Step budget in units of the collapse time constant 1 / (gamma k^2 (a-b)^2).
BUDGET_TIME_CONSTANTS = 50.0
#: Above this unresolved fraction a Born experiment is flagged.
MAX_UNRESOLVED = 0.01

BRANCHES = {"x": np.array([True, False]), "y": np.array([False, True])}


@dataclass(frozen=True)
class TwoLevelSpec:
    alpha: float
    beta: float
    a: float = 1.0
    b: float = -1.0
    k: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("amplitudes must be real and nonnegative")
        if abs(self.alpha ** 2 + self.beta ** 2 - 1.0) > 1e-12:
            raise ValueError(f"alpha^2 + beta^2 = {self.alpha ** 2 + self.beta ** 2!r} != 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    @classmethod
    def from_beta2(cls, beta2: float, **kw) -> "TwoLevelSpec":
        if not 0.0 <= beta2 <= 1.0:
            raise ValueError("beta^2 must lie in [0, 1]")
        return cls(math.sqrt(1.0 - beta2), math.sqrt(beta2), **kw)

    @property
    def state(self) -> StateVector:
        return StateVector([self.alpha, self.beta])

    @property
    def operator(self) -> HermitianOperator:
        return HermitianOperator.diagonal([self.a, self.b])

    @property
    def collapse_rate(self) -> float:
        """gamma k^2 (a - b)^2, the inverse collapse time constant."""
        return self.gamma * self.k ** 2 * (self.a - self.b) ** 2

    def term(self) -> CollapseTerm:
        return CollapseTerm(self.operator, self.k, self.gamma)


def tangent_term(spec: TwoLevelSpec) -> tuple[float, StateVector]:
    """Split ``O psi`` into a coefficient times the unit tangent to the arc.

    Returns ``(k alpha beta (a - b), beta|x> - alpha|y>)``.
    """
    coef = spec.k * spec.alpha * spec.beta * (spec.a - spec.b)
    return coef, StateVector([spec.beta, -spec.alpha], tol=1e-9)


def walk_coordinate(alpha: float, beta: float) -> float:
    """Position on the arc, ``beta^2 = sin^2(theta)``; 0 at |x>, 1 at |y>."""
    if alpha < 0 or beta < 0 or abs(alpha * alpha + beta * beta - 1.0) > 1e-9:
        raise ValueError("need alpha, beta >= 0 with alpha^2 + beta^2 = 1")
    if beta == 0.0:
        return 0.0
    if alpha == 0.0:
        return 1.0
    return beta * beta


# --- random-walk oracle ---------------------------------------------------

@dataclass(frozen=True)
class FixedStep:
    delta: float


@dataclass(frozen=True)
class CappedRandomStep:
    """Step uniform in ``(0, delta_max]``, capped at the distance to the nearer end."""

    delta_max: float = 0.1


def gambler_ruin_oracle(p: float, step_rule=FixedStep(0.05), n_walks: int = 10_000, seed: int = 0,
                        max_steps: int = 1_000_000) -> float:
    """Fraction of unbiased walks on [0, 1] started at ``p`` absorbed at 1.

    Every step moves ``+delta`` or ``-delta`` with equal probability, with
    ``delta`` never larger than the distance to the nearer end point, so the
    walk is a bounded martingale and lands exactly on 0 or 1.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p in (0.0, 1.0):
        return p
    rng = np.random.default_rng(seed)
    pos = np.full(n_walks, float(p))
    alive = np.ones(n_walks, dtype=bool)
    eps = 1e-12
    for _ in range(max_steps):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        x = pos[idx]
        cap = np.minimum(x, 1.0 - x)
        if isinstance(step_rule, FixedStep):
            delta = np.minimum(step_rule.delta, cap)
        elif isinstance(step_rule, CappedRandomStep):
            u = 1.0 - rng.random(idx.size)
            delta = np.minimum(u * step_rule.delta_max, cap)
        else:
            raise TypeError(f"unknown step rule {step_rule!r}")
        sign = np.where(rng.random(idx.size) < 0.5, -1.0, 1.0)
        x = x + sign * delta
        x[x <= eps] = 0.0
        x[x >= 1.0 - eps] = 1.0
        pos[idx] = x
        alive[idx] = (x > 0.0) & (x < 1.0)
    else:
        raise RuntimeError("walks not absorbed within max_steps")
    return float(np.mean(pos == 1.0))


# --- Born experiment -------------------------------------------------------

@dataclass
class BornCounts:
    count_x: int
    count_y: int
    unresolved: int
    n_traj: int
    flagged: bool
    dt: float
    n_steps: int
    stats: EnsembleStats | None = None

    @property
    def frequency_y(self) -> float:
        resolved = self.count_x + self.count_y
        return self.count_y / resolved if resolved else float("nan")


def default_schedule(spec: TwoLevelSpec, dt: float | None = None, hamiltonian_norm: float = 0.0,
                     record_every: int | None = None) -> Schedule:
    rate = spec.collapse_rate
    if rate <= 0:
        raise ValueError("collapse needs gamma > 0 and a != b")
    if dt is None:
        dt = STEP_SCALE / max(rate, hamiltonian_norm)
    n_steps = int(math.ceil(BUDGET_TIME_CONSTANTS / (rate * dt)))
    return Schedule(dt, n_steps, record_every or max(1, n_steps // 50))


def born_scenario(spec: TwoLevelSpec, *, hamiltonian_scale: float = 0.0,
                  threshold: float = COMPLETION_THRESHOLD) -> EnsembleScenario:
    H = None
    if hamiltonian_scale:
        H = HermitianOperator(hamiltonian_scale * spec.operator.entries)
    return EnsembleScenario(spec.state, H, (spec.term(),), branches=BRANCHES, threshold=threshold)


def born_experiment(spec: TwoLevelSpec, n_traj: int, dt: float | None = None, seed: int = 0, *,
                    hamiltonian_scale: float = 0.0, threshold: float = COMPLETION_THRESHOLD,
                    workers: int | None = 1) -> BornCounts:
    """Run ``n_traj`` collapse trajectories from ``spec`` and count outcomes.

    ``hamiltonian_scale`` adds ``H = eps * O``, which commutes with the
    collapse operator. Runs with more than 1% unresolved trajectories are
    flagged.
    """
    if spec.gamma <= 0 or spec.a == spec.b:
        raise ValueError("Born experiment needs gamma > 0 and a != b")
    h_norm = abs(hamiltonian_scale) * max(abs(spec.a), abs(spec.b))
    sched = default_schedule(spec, dt, h_norm)
    st = run_ensemble(born_scenario(spec, hamiltonian_scale=hamiltonian_scale, threshold=threshold),
                      n_traj, seed, sched, workers=workers)
    c = st.outcome_counts
    unresolved = st.unresolved + st.failed
    return BornCounts(c["x"], c["y"], unresolved, n_traj, unresolved > MAX_UNRESOLVED * n_traj,
                      sched.dt, sched.n_steps, st)


def born_verdict(counts: BornCounts, spec: TwoLevelSpec, **kw):
    return born_test({"x": counts.count_x, "y": counts.count_y}, {"x": spec.alpha ** 2, "y": spec.beta ** 2}, **kw)
