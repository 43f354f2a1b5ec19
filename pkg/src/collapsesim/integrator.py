"""Euler–Maruyama stepping of the norm-preserving stochastic collapse equation

    dpsi = -(i/hbar) H psi dt + sum_i O_i psi sqrt(g_i) dxi - 1/2 (sum_i sqrt(g_i) O_i)^2 psi dt

with ``O_i = k_i (A_i - <A_i>)`` and a single global increment ``dxi`` shared
by every collapse term. The state is renormalized after each step; the norm
before renormalization is kept as a diagnostic.

Trajectories are propagated in blocks (rows of a 2-D array) so that
ensembles vectorize; a single trajectory is just a block of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .noise import BatchNoise, NoiseConfig
from .state import DimensionError, HermitianOperator, StateVector, batch_norms

#: Default completion threshold on a branch weight.
COMPLETION_THRESHOLD = 1.0 - 1e-6
#: Default bound on the per-step increment scale used by :func:`default_dt`.
STEP_SCALE = 1e-3


class IntegrationError(RuntimeError):
    """Non-finite amplitudes appeared during a step."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RateModel(Protocol):
    """Variable collapse rate computed from the current state.

    ``start(n)`` returns a dict of per-trajectory arrays (leading axis ``n``);
    ``__call__`` returns the rate for each row and updates the dict in place.
    """

    def start(self, n: int) -> dict: ...

    def __call__(self, psi: np.ndarray, state: dict, dt: float) -> np.ndarray: ...


@dataclass(frozen=True)
class CollapseTerm:
    """One collapse channel: operator, strength ``k`` and rate ``gamma``.

    ``rate`` is either a nonnegative float (fixed rate) or a
    :class:`RateModel` evaluated every step.
    """

    operator: HermitianOperator
    strength: float = 1.0
    rate: float | RateModel = 1.0

    def __post_init__(self):
        if not np.isfinite(self.strength):
            raise ValueError("collapse strength must be finite")
        if self.fixed and not (self.rate >= 0 and np.isfinite(self.rate)):
            raise ValueError(f"fixed collapse rate must be finite and >= 0, got {self.rate!r}")

    @property
    def fixed(self) -> bool:
        return isinstance(self.rate, (int, float, np.floating, np.integer))

    def spread(self) -> float:
        """Eigenvalue spread of the operator."""
        w, _ = self.operator.eigh()
        return float(w[-1] - w[0])


@dataclass(frozen=True)
class Schedule:
    dt: float
    n_steps: int
    record_every: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError("schedule dt must be positive")
        if self.n_steps < 1 or self.record_every < 1:
            raise ValueError("n_steps and record_every must be >= 1")

    def record_steps(self) -> np.ndarray:
        steps = np.arange(0, self.n_steps + 1, self.record_every)
        if steps[-1] != self.n_steps:
            steps = np.append(steps, self.n_steps)
        return steps


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    states: np.ndarray
    norms: np.ndarray
    pre_norms: np.ndarray
    expectations: dict[str, np.ndarray]
    outcome: str | None
    stop_step: int
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        return (
            self.outcome == other.outcome
            and self.stop_step == other.stop_step
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.norms, other.norms)
            and self.expectations.keys() == other.expectations.keys()
            and all(np.array_equal(self.expectations[k], other.expectations[k]) for k in self.expectations)
        )

    @property
    def final_state(self) -> StateVector:
        return StateVector(self.states[-1])


@dataclass
class BatchResult:
    """Output of :func:`integrate_batch` for a block of trajectories.

    Series arrays have shape ``(n_records, n_traj)``; a trajectory that
    finished early keeps its final state for the remaining records.
    """

    indices: np.ndarray
    times: np.ndarray
    record_steps: np.ndarray
    series: dict[str, np.ndarray]
    outcomes: list[str | None]
    stop_steps: np.ndarray
    final_states: np.ndarray
    states: np.ndarray | None
    drift_abs_sum: float
    drift_sum: float
    drift_count: int
    branch_labels: list[str]
    failed: np.ndarray


# --- single step ------------------------------------------------------------

def _apply_h(H, psi: np.ndarray) -> np.ndarray:
    return H.apply(psi)


def _step_rows(psi, H, ops, strengths, gammas, dt, dxi, hbar=1.0, bias=False, spread=None):
    """One Euler–Maruyama step on rows of ``psi``; returns (unnormalized, pre_norm).

    If ``spread`` is a list, ``|G psi|^2`` per row is appended to it.
    """
    out = psi.copy()
    if H is not None:
        out -= (1j * dt / hbar) * _apply_h(H, psi)
    if ops:
        # G psi with G = sum_i sqrt(g_i) k_i (A_i - <A_i>)
        g_psi = np.zeros_like(psi)
        means = []
        coefs = []
        for op, k, g in zip(ops, strengths, gammas):
            a_psi = op.apply(psi)
            mean = np.einsum("ni,ni->n", psi.conj(), a_psi).real[:, None]
            c = np.sqrt(g) * k
            c = c[:, None] if np.ndim(c) else c
            means.append(mean)
            coefs.append(c)
            g_psi += c * (a_psi - mean * psi)
        gg_psi = np.zeros_like(psi)
        for op, c, mean in zip(ops, coefs, means):
            gg_psi += c * (op.apply(g_psi) - mean * g_psi)
        if spread is not None:
            spread.append(batch_norms(g_psi) ** 2)
        noise = np.abs(dxi) if bias else dxi
        out += noise[:, None] * g_psi
        out -= (0.5 * dt) * gg_psi
    norms = batch_norms(out)
    return out, norms


def em_step(
    psi: StateVector,
    H: HermitianOperator | None,
    terms: Sequence[CollapseTerm],
    dt: float,
    increments,
    *,
    gammas: Sequence[float] | None = None,
    hbar: float = 1.0,
) -> StateVector:
    """Advance ``psi`` by one Euler–Maruyama step and renormalize.

    ``increments`` is the global noise value ``dxi`` for this step, either
    as a scalar or as one (equal) value per term. Variable-rate terms need
    their current rates in ``gammas``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = psi.amplitudes[None, :]
    if H is not None and getattr(H, "dim", v.shape[1]) != v.shape[1]:
        raise DimensionError("Hamiltonian and state dimensions differ")
    inc = np.atleast_1d(np.asarray(increments))
    if terms and inc.size not in (1, len(terms)):
        raise ValueError("need one increment per collapse term")
    if inc.size > 1 and not np.all(inc == inc[0]):
        raise ValueError("all collapse terms share the single global noise increment")
    dxi = inc[:1]
    if gammas is None:
        if not all(t.fixed for t in terms):
            raise ValueError("variable-rate terms need explicit gammas")
        gammas = [t.rate for t in terms]
    g = [float(x) for x in gammas]
    out, norms = _step_rows(v, H, [t.operator for t in terms], [t.strength for t in terms], g, dt, dxi, hbar)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite amplitudes after step", {"dt": dt, "dxi": complex(dxi[0]), "pre_norm": float(norms[0])})
    return StateVector(out[0] / norms[0])


def default_dt(H: HermitianOperator | None, terms: Sequence[CollapseTerm], hbar: float = 1.0,
               scale: float = STEP_SCALE, h_norm: float | None = None) -> float:
    """Largest dt with ``max(|H| dt / hbar, k^2 (a - b)^2 gamma dt) <= scale``.

    Variable-rate terms do not enter; pass an explicit dt for those runs.
    """
    rates = []
    if H is not None:
        rates.append((h_norm if h_norm is not None else H.spectral_norm()) / hbar)
    for t in terms:
        if t.fixed:
            rates.append(t.strength ** 2 * t.spread() ** 2 * t.rate)
    top = max(rates, default=0.0)
    if top <= 0:
        raise ValueError("cannot choose dt: no Hamiltonian or collapse scale")
    return scale / top


# --- branches -------------------------------------------------------------

def eigen_branches(op: HermitianOperator, rtol: float = 1e-9) -> dict[str, np.ndarray]:
    """Projectors onto the eigenspaces of ``op`` keyed ``branch0, branch1, ...``.

    Diagonal operators give boolean masks (cheap); otherwise dense projectors.
    """
    w, vecs = op.eigh()
    scale = max(1.0, float(np.max(np.abs(w))))
    groups: list[list[int]] = []
    for i in range(len(w)):
        if groups and abs(w[i] - w[groups[-1][0]]) <= rtol * scale:
            groups[-1].append(i)
        else:
            groups.append([i])
    out = {}
    for n, g in enumerate(groups):
        if op.is_diagonal:
            mask = np.zeros(op.dim, dtype=bool)
            mask[np.argsort(op.diag, kind="stable")[g]] = True
            out[f"branch{n}"] = mask
        else:
            v = vecs[:, g]
            out[f"branch{n}"] = v @ v.conj().T
    return out


class _Branches:
    """Branch weights ``<psi|P|psi>`` for every row, masks folded into one matmul."""

    def __init__(self, branches: Mapping[str, np.ndarray], dim: int):
        self.labels = list(branches)
        mats = [np.asarray(p) for p in branches.values()]
        self.diagonal = all(m.ndim == 1 for m in mats)
        if self.diagonal:
            self.masks = np.stack([m.astype(np.float64) for m in mats], axis=1)
        else:
            self.mats = [np.diag(m.astype(np.float64)) if m.ndim == 1 else m for m in mats]

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        if self.diagonal:
            return (psi.real ** 2 + psi.imag ** 2) @ self.masks
        return np.stack([np.einsum("ni,ni->n", psi.conj(), psi @ m.T).real for m in self.mats], axis=1)


# --- trajectories -----------------------------------------------------------

def _as_rows(initial, n: int) -> np.ndarray:
    if isinstance(initial, StateVector):
        v = initial.amplitudes
        return np.repeat(v[None, :], n, axis=0)
    a = np.asarray(initial, dtype=np.complex128)
    if a.ndim == 1:
        return np.repeat(a[None, :], n, axis=0)
    if a.shape[0] != n:
        raise ValueError("initial state block does not match number of trajectories")
    return a.copy()


def integrate_batch(
    initial,
    H,
    terms: Sequence[CollapseTerm],
    schedule: Schedule,
    noise: NoiseConfig,
    indices,
    *,
    threshold: float | None = COMPLETION_THRESHOLD,
    branches: Mapping[str, np.ndarray] | None = None,
    observables: Mapping[str, Callable[[np.ndarray], np.ndarray]] | None = None,
    keep_states: bool = False,
    hbar: float = 1.0,
    bias: bool = False,
    on_failure: str = "raise",
    chunk: int = 512,
) -> BatchResult:
    """Integrate one block of trajectories with trajectory indices ``indices``.

    ``noise.dt`` must equal ``schedule.dt``. With ``threshold`` set, a
    trajectory stops as soon as one branch weight reaches it and is labelled
    with that branch; without explicit ``branches`` the eigenspaces of the
    first collapse operator are used. ``bias`` replaces ``dxi`` by ``|dxi|``;
    it exists only to build deliberately broken negative controls.

    With ``on_failure="mark"`` a trajectory whose amplitudes become
    non-finite is frozen at its last finite state and flagged in
    ``BatchResult.failed`` instead of aborting the block.
    """
    if on_failure not in ("raise", "mark"):
        raise ValueError("on_failure must be 'raise' or 'mark'")
    indices = np.asarray(indices, dtype=np.int64)
    n = indices.size
    if noise.dt != schedule.dt:
        raise ValueError("noise dt and schedule dt differ")
    dt = schedule.dt
    psi_all = _as_rows(initial, n)
    d = psi_all.shape[1]
    ops = [t.operator for t in terms]
    for op in ops:
        if op.dim != d:
            raise DimensionError("collapse operator dimension differs from state dimension")
    strengths = [float(t.strength) for t in terms]
    if branches is None and terms and threshold is not None:
        branches = eigen_branches(ops[0])
    weigh = _Branches(branches, d) if branches else None
    labels = weigh.labels if weigh else []
    use_completion = threshold is not None and bool(labels)
    observables = dict(observables or {})

    rec_steps = schedule.record_steps()
    n_rec = rec_steps.size
    series: dict[str, np.ndarray] = {"norm": np.ones((n_rec, n)), "pre_norm": np.ones((n_rec, n))}
    for name in observables:
        series[name] = np.empty((n_rec, n))
    var_terms = [i for i, t in enumerate(terms) if not t.fixed]
    sfx = {j: ("" if len(var_terms) == 1 else f"_{j}") for j in var_terms}
    for j in var_terms:
        series["gamma" + sfx[j]] = np.zeros((n_rec, n))
        series["gamma_integral" + sfx[j]] = np.zeros((n_rec, n))
    for lab in labels:
        series["w_" + lab] = np.empty((n_rec, n))
    states = np.empty((n_rec, n, d), dtype=np.complex128) if keep_states else None

    gamma_now = np.zeros((len(terms), n))
    gamma_int = np.zeros((len(terms), n))
    pre_all = np.ones(n)
    outcomes: list[str | None] = [None] * n
    stop_steps = np.full(n, schedule.n_steps, dtype=np.int64)
    failed = np.zeros(n, dtype=bool)

    # rows of the working arrays map to trajectories through ``active``;
    # finished rows are masked out of ``live`` and dropped lazily
    active = np.arange(n)
    live = np.ones(n, dtype=bool)
    psi = psi_all.copy()
    rate_states = [None if t.fixed else t.rate.start(n) for t in terms]
    noise_gen = BatchNoise(noise, indices)
    buf = np.empty((0, n))
    buf_pos = 0
    drift_abs = drift_sum = 0.0
    drift_n = 0
    rec_i = 0

    def record():
        nonlocal rec_i
        psi_all[active[live]] = psi[live]
        i = rec_i
        series["norm"][i] = batch_norms(psi_all)
        series["pre_norm"][i] = pre_all
        for name, fn in observables.items():
            series[name][i] = fn(psi_all)
        for j in var_terms:
            series["gamma" + sfx[j]][i] = gamma_now[j]
            series["gamma_integral" + sfx[j]][i] = gamma_int[j]
        if weigh:
            w = weigh(psi_all)
            for c, lab in enumerate(labels):
                series["w_" + lab][i] = w[:, c]
        if states is not None:
            states[i] = psi_all
        rec_i += 1

    def check_done(step_no):
        if not use_completion:
            return
        hit = weigh(psi) >= threshold
        done = live & np.any(hit, axis=1)
        if not np.any(done):
            return
        rows = np.nonzero(done)[0]
        traj = active[rows]
        first = np.argmax(hit[rows], axis=1)
        for t, f in zip(traj, first):
            outcomes[t] = labels[f]
        stop_steps[traj] = step_no
        psi_all[traj] = psi[rows]
        gamma_now[:, traj] = 0.0
        live[rows] = False

    def compact():
        nonlocal active, live, psi, buf, rate_states
        keep = live
        active = active[keep]
        psi = psi[keep]
        buf = buf[:, keep]
        noise_gen._streams = [s for s, k in zip(noise_gen._streams, keep) if k]
        rate_states = [None if s is None else {k: v[keep] for k, v in s.items()} for s in rate_states]
        live = np.ones(active.size, dtype=bool)

    fixed_g = [float(t.rate) if t.fixed else None for t in terms]
    check_done(0)
    record()
    next_rec = 1
    for step in range(1, schedule.n_steps + 1):
        n_dead = live.size - int(np.count_nonzero(live))
        if n_dead and (n_dead == live.size or n_dead >= max(8, live.size // 8)):
            compact()
        if active.size == 0:
            break
        if buf_pos >= buf.shape[0]:
            buf = noise_gen.next(min(chunk, schedule.n_steps - step + 1))
            buf_pos = 0
        dxi = buf[buf_pos]
        buf_pos += 1
        gam = []
        for j, t in enumerate(terms):
            if fixed_g[j] is not None:
                g = fixed_g[j]
            else:
                g = np.asarray(t.rate(psi, rate_states[j], dt), dtype=np.float64)
                rows = active[live]
                gamma_now[j, rows] = g[live]
                gamma_int[j, rows] += g[live] * dt
            gam.append(g)
        new, norms = _step_rows(psi, H, ops, strengths, gam, dt, dxi, hbar, bias)
        bad = ~np.isfinite(norms) | (norms == 0)
        if np.any(bad & live):
            rows = np.nonzero(bad & live)[0]
            if on_failure == "raise":
                raise IntegrationError(
                    "non-finite amplitudes after step",
                    {"step": step, "t": step * dt, "trajectory_index": int(indices[active[rows[0]]]), "dt": dt},
                )
            traj = active[rows]
            failed[traj] = True
            stop_steps[traj] = step - 1
            psi_all[traj] = psi[rows]
            live[rows] = False
            new[rows] = psi[rows]
            norms[rows] = 1.0
        drift = norms[live] - 1.0
        drift_abs += float(np.sum(np.abs(drift)))
        drift_sum += float(np.sum(drift))
        drift_n += drift.size
        pre_all[active[live]] = norms[live]
        psi = new / norms[:, None]
        check_done(step)
        while next_rec < n_rec and rec_steps[next_rec] == step:
            record()
            next_rec += 1
    if active.size:
        psi_all[active[live]] = psi[live]
    while rec_i < n_rec:
        record()

    return BatchResult(
        indices=indices,
        times=rec_steps * dt,
        record_steps=rec_steps,
        series=series,
        outcomes=outcomes,
        stop_steps=stop_steps,
        final_states=psi_all,
        states=states,
        drift_abs_sum=drift_abs,
        drift_sum=drift_sum,
        drift_count=drift_n,
        branch_labels=labels,
        failed=failed,
    )


def integrate_trajectory(
    initial: StateVector,
    H,
    terms: Sequence[CollapseTerm],
    schedule: Schedule,
    noise: NoiseConfig,
    **kwargs,
) -> TrajectoryRecord:
    """Integrate a single trajectory (``noise.trajectory_index``)."""
    res = integrate_batch(initial, H, terms, schedule, noise, [noise.trajectory_index], keep_states=True, **kwargs)
    return record_from_batch(res, 0, threshold=kwargs.get("threshold", COMPLETION_THRESHOLD), dt=schedule.dt)


def record_from_batch(res: BatchResult, row: int, *, threshold=None, dt=None) -> TrajectoryRecord:
    """Cut one trajectory out of a block result, ending at its stop step."""
    stop = int(res.stop_steps[row])
    upto = int(np.searchsorted(res.record_steps, stop, side="right"))
    take = list(range(upto))
    times = res.times[:upto].copy()
    if res.record_steps[upto - 1] != stop:
        # the state is frozen after completion, so the next record holds the
        # values at the completion step
        take.append(upto)
        step_dt = dt if dt is not None else res.times[1] / res.record_steps[1]
        times = np.append(times, stop * step_dt)
    series = {k: v[take, row].copy() for k, v in res.series.items()}
    states = res.states[take, row].copy() if res.states is not None else res.final_states[row][None, :].copy()
    norms = series.pop("norm")
    pre = series.pop("pre_norm")
    return TrajectoryRecord(
        times=times,
        states=states,
        norms=norms,
        pre_norms=pre,
        expectations=series,
        outcome=res.outcomes[row],
        stop_step=stop,
        metadata={"completion_threshold": threshold, "dt": dt, "trajectory_index": int(res.indices[row])},
    )


def norm_drift(initial, H, terms: Sequence[CollapseTerm], dt: float, t_end: float, *, n_traj: int = 200,
               seed: int = 0, hbar: float = 1.0) -> dict:
    """Per-step pre-renormalization norm error over ``[0, t_end]``.

    Returns the mean of ``| |psi'| - 1 |`` over steps and trajectories
    (``"drift"``) and the mean of what is left of ``|psi'|^2 - 1`` after
    removing ``|G psi|^2 (|dxi|^2 - dt)``, the part that vanishes under the
    Itô rule ``dxi dxi* = dt`` (``"residual"``). Fixed-rate terms only.
    """
    if not all(t.fixed for t in terms):
        raise ValueError("norm_drift needs fixed-rate terms")
    n_steps = max(1, int(round(t_end / dt)))
    psi = _as_rows(initial, n_traj)
    noise = BatchNoise(NoiseConfig(seed, dt), np.arange(n_traj))
    ops = [t.operator for t in terms]
    ks = [float(t.strength) for t in terms]
    gs = [float(t.rate) for t in terms]
    drift = resid = 0.0
    done = 0
    while done < n_steps:
        block = noise.next(min(1024, n_steps - done))
        for dxi in block:
            spread: list = []
            out, norms = _step_rows(psi, H, ops, ks, gs, dt, dxi, hbar, spread=spread)
            drift += float(np.sum(np.abs(norms - 1.0)))
            ito = spread[0] * (np.abs(dxi) ** 2 - dt) if spread else 0.0
            resid += float(np.sum(np.abs(norms ** 2 - 1.0 - ito)))
            psi = out / norms[:, None]
        done += block.shape[0]
    count = n_steps * n_traj
    return {"dt": dt, "n_steps": n_steps, "drift": drift / count, "residual": resid / count}
