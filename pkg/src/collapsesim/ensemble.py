"""Trajectory ensembles and the statistical test battery.

Trajectory ``i`` of an ensemble always uses noise stream ``i`` of the base
seed. Trajectories are integrated in fixed-size blocks whose boundaries
depend only on the ensemble size and the state dimension, never on the
number of workers, so the merged statistics are bit-identical for any
worker count or execution order.

Statistics are kept as per-group sums over contiguous groups of
trajectories. Means and standard errors come from the sums; nonlinear
estimators (fitted rates, trace distances) get delete-one-group jackknife
errors.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from .integrator import (
    COMPLETION_THRESHOLD,
    CollapseTerm,
    Schedule,
    integrate_batch,
)
from .noise import NoiseConfig
from .state import BipartitePartition, HermitianOperator, StateVector, _reduced_density_array, trace_distance

MAX_GROUPS = 100
#: Target number of complex amplitudes held per block.
BLOCK_AMPLITUDES = 1 << 21
MAX_BLOCK = 16384
#: Ensemble fails when more than this fraction of trajectories fail.
MAX_FAILURE_FRACTION = 1e-3
DENSITY_MAX_DIM = 4


class EnsembleError(RuntimeError):
    pass


# --- observables ------------------------------------------------------------
# Module-level callables so that scenarios pickle into worker processes.

@dataclass(frozen=True)
class Expectation:
    op: HermitianOperator

    def __call__(self, psi):
        return np.einsum("ni,ni->n", psi.conj(), self.op.apply(psi)).real


@dataclass(frozen=True)
class DensityElement:
    i: int
    j: int
    part: str  # "re" | "im"

    def __call__(self, psi):
        v = psi[:, self.i] * psi[:, self.j].conj()
        return v.real if self.part == "re" else v.imag


@dataclass(frozen=True)
class ReducedDensityElement:
    partition: BipartitePartition
    keep: str
    i: int
    j: int
    part: str

    def __call__(self, psi):
        rho = _reduced_density_array(psi, self.partition, self.keep)[:, self.i, self.j]
        return rho.real if self.part == "re" else rho.imag


def density_observables(dim: int, prefix: str = "rho") -> dict:
    out = {}
    for i in range(dim):
        for j in range(i, dim):
            out[f"{prefix}[{i},{j}].re"] = DensityElement(i, j, "re")
            if i != j:
                out[f"{prefix}[{i},{j}].im"] = DensityElement(i, j, "im")
    return out


def _density_from(getter, dim: int, prefix: str = "rho") -> np.ndarray:
    first = getter(f"{prefix}[0,0].re")
    rho = np.zeros(first.shape + (dim, dim), dtype=np.complex128)
    for i in range(dim):
        for j in range(i, dim):
            v = getter(f"{prefix}[{i},{j}].re").astype(np.complex128)
            if i != j:
                v = v + 1j * getter(f"{prefix}[{i},{j}].im")
            rho[..., i, j] = v
            rho[..., j, i] = v.conj()
    return rho


# --- scenario -----------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleScenario:
    """Everything a worker needs to integrate trajectories.

    ``initial`` may be a :class:`StateVector` or a raw amplitude array.
    Density-matrix series are recorded automatically for dimension <= 4.
    """

    initial: StateVector | np.ndarray
    H: object | None
    terms: tuple[CollapseTerm, ...] = ()
    branches: Mapping[str, np.ndarray] | None = None
    threshold: float | None = COMPLETION_THRESHOLD
    observables: Mapping[str, Callable] = field(default_factory=dict)
    complex_noise: bool = False
    bias: bool = False
    hbar: float = 1.0

    @property
    def dim(self) -> int:
        return int(np.asarray(self.initial).shape[-1])

    def all_observables(self) -> dict:
        obs = dict(self.observables)
        if self.dim <= DENSITY_MAX_DIM:
            obs.update(density_observables(self.dim))
        return obs


def group_layout(n_traj: int) -> tuple[int, int]:
    """(number of groups, trajectories per group) for an ensemble size."""
    n_groups = min(n_traj, MAX_GROUPS)
    size = -(-n_traj // n_groups)
    return -(-n_traj // size), size


def block_size(n_traj: int, dim: int) -> int:
    _, g = group_layout(n_traj)
    target = max(1, min(MAX_BLOCK, BLOCK_AMPLITUDES // max(dim, 1)))
    return g * max(1, target // g)


# --- statistics container -----------------------------------------------------

@dataclass
class EnsembleStats:
    """Merged ensemble statistics.

    ``counts`` has one row per group and one column per outcome label plus
    trailing ``unresolved`` and ``failed`` columns. ``sums``/``sumsq`` map a
    series name to per-group sums of shape ``(n_groups, n_records)``.
    """

    n_traj: int
    group_size: int
    group_ids: np.ndarray
    times: np.ndarray
    labels: list[str]
    counts: np.ndarray
    sums: dict[str, np.ndarray]
    sumsq: dict[str, np.ndarray]
    group_n: np.ndarray
    dim: int
    metadata: dict = field(default_factory=dict)

    # -- merge ---------------------------------------------------------------
    @classmethod
    def merge(cls, parts: Sequence["EnsembleStats"]) -> "EnsembleStats":
        """Combine partial ensembles covering disjoint groups."""
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to merge")
        ids = np.concatenate([p.group_ids for p in parts])
        if np.unique(ids).size != ids.size:
            raise ValueError("partial ensembles overlap")
        order = np.argsort(ids, kind="stable")
        first = parts[0]
        for p in parts[1:]:
            if p.labels != first.labels or p.n_traj != first.n_traj or not np.array_equal(p.times, first.times):
                raise ValueError("partial ensembles are incompatible")

        def cat(get):
            return np.concatenate([get(p) for p in parts])[order]

        return cls(
            n_traj=first.n_traj,
            group_size=first.group_size,
            group_ids=ids[order],
            times=first.times,
            labels=list(first.labels),
            counts=cat(lambda p: p.counts),
            sums={k: cat(lambda p, k=k: p.sums[k]) for k in first.sums},
            sumsq={k: cat(lambda p, k=k: p.sumsq[k]) for k in first.sumsq},
            group_n=cat(lambda p: p.group_n),
            dim=first.dim,
            metadata=_merge_metadata(sorted(parts, key=lambda p: int(p.group_ids.min()))),
        )

    # -- derived -------------------------------------------------------------
    @property
    def n_completed(self) -> int:
        return int(self.group_n.sum())

    @property
    def outcome_counts(self) -> dict[str, int]:
        tot = self.counts.sum(axis=0)
        return {lab: int(tot[i]) for i, lab in enumerate(self.labels)}

    @property
    def unresolved(self) -> int:
        return int(self.counts[:, -2].sum())

    @property
    def failed(self) -> int:
        return int(self.counts[:, -1].sum())

    def mean(self, name: str) -> np.ndarray:
        return _ordered_sum(self.sums[name]) / self.n_completed

    def stderr(self, name: str) -> np.ndarray:
        n = self.n_completed
        if n < 2:
            return np.full(self.times.shape, np.nan)
        m = self.mean(name)
        var = (_ordered_sum(self.sumsq[name]) - n * m * m) / (n - 1)
        return np.sqrt(np.maximum(var, 0.0) / n)

    @property
    def mean_series(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        return {k: (self.mean(k), self.stderr(k)) for k in self.sums}

    @property
    def mean_density(self) -> np.ndarray | None:
        if self.dim > DENSITY_MAX_DIM:
            return None
        return _density_from(self.mean, self.dim)

    def jackknife(self, estimator: Callable[[Callable[[str], np.ndarray]], object]) -> tuple[np.ndarray, np.ndarray]:
        """Delete-one-group jackknife of ``estimator(mean_of)``.

        ``estimator`` receives a function mapping a series name to its mean
        series and returns a scalar or array.
        """
        full = np.asarray(estimator(self.mean), dtype=np.float64)
        g = self.group_ids.size
        if g < 2:
            return full, np.full(full.shape, np.nan)
        tot = {k: _ordered_sum(v) for k, v in self.sums.items()}
        n_tot = self.n_completed
        reps = []
        for i in range(g):
            n_i = n_tot - self.group_n[i]
            reps.append(np.asarray(estimator(lambda k, i=i, n_i=n_i: (tot[k] - self.sums[k][i]) / n_i), dtype=np.float64))
        reps = np.array(reps)
        se = np.sqrt((g - 1) / g * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
        return full, se

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n_traj": self.n_traj,
            "group_size": self.group_size,
            "group_ids": self.group_ids.tolist(),
            "times": self.times.tolist(),
            "labels": self.labels,
            "counts": self.counts.tolist(),
            "sums": {k: v.tolist() for k, v in self.sums.items()},
            "sumsq": {k: v.tolist() for k, v in self.sumsq.items()},
            "group_n": self.group_n.tolist(),
            "dim": self.dim,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleStats":
        n_rec = len(d["times"])
        return cls(
            n_traj=int(d["n_traj"]),
            group_size=int(d["group_size"]),
            group_ids=np.asarray(d["group_ids"], dtype=np.int64),
            times=np.asarray(d["times"], dtype=np.float64),
            labels=list(d["labels"]),
            counts=np.asarray(d["counts"], dtype=np.int64).reshape(-1, len(d["labels"]) + 2),
            sums={k: np.asarray(v, dtype=np.float64).reshape(-1, n_rec) for k, v in d["sums"].items()},
            sumsq={k: np.asarray(v, dtype=np.float64).reshape(-1, n_rec) for k, v in d["sumsq"].items()},
            group_n=np.asarray(d["group_n"], dtype=np.int64),
            dim=int(d["dim"]),
            metadata=dict(d.get("metadata", {})),
        )

    def __eq__(self, other):
        if not isinstance(other, EnsembleStats):
            return NotImplemented
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)


_SUMMED = ("drift_abs_sum", "drift_count")


def _merge_metadata(parts: Sequence[EnsembleStats]) -> dict:
    # parts arrive in group order, so the float sums do not depend on how
    # the caller ordered them
    out = dict(parts[0].metadata)
    for key in _SUMMED:
        if all(key in p.metadata for p in parts):
            total = 0
            for p in parts:
                total = total + p.metadata[key]
            out[key] = total
    if all("max_stop_step" in p.metadata for p in parts):
        out["max_stop_step"] = max(p.metadata["max_stop_step"] for p in parts)
    return out


def _ordered_sum(a: np.ndarray) -> np.ndarray:
    # sequential over groups so the result does not depend on how the
    # groups were produced
    out = np.zeros(a.shape[1:])
    for row in a:
        out = out + row
    return out


# --- running --------------------------------------------------------------------

def _run_block(scenario: EnsembleScenario, n_traj: int, base_seed: int, schedule: Schedule, start: int, stop: int) -> EnsembleStats:
    n_groups, gsize = group_layout(n_traj)
    noise = NoiseConfig(base_seed, schedule.dt, scenario.complex_noise)
    obs = scenario.all_observables()
    res = integrate_batch(
        scenario.initial, scenario.H, scenario.terms, schedule, noise, np.arange(start, stop),
        threshold=scenario.threshold, branches=scenario.branches, observables=obs,
        hbar=scenario.hbar, bias=scenario.bias, on_failure="mark",
    )
    labels = res.branch_labels
    gids = np.arange(start // gsize, -(-stop // gsize))
    counts = np.zeros((gids.size, len(labels) + 2), dtype=np.int64)
    group_n = np.zeros(gids.size, dtype=np.int64)
    lab_idx = {lab: i for i, lab in enumerate(labels)}
    ok = ~res.failed
    for r in range(stop - start):
        g = (start + r) // gsize - gids[0]
        if res.failed[r]:
            counts[g, -1] += 1
            continue
        group_n[g] += 1
        o = res.outcomes[r]
        counts[g, lab_idx[o] if o is not None else -2] += 1
    sums, sumsq = {}, {}
    for name, arr in res.series.items():
        s = np.zeros((gids.size, arr.shape[0]))
        q = np.zeros_like(s)
        for gi, gid in enumerate(gids):
            lo = max(gid * gsize, start) - start
            hi = min((gid + 1) * gsize, stop) - start
            sel = arr[:, lo:hi][:, ok[lo:hi]]
            s[gi] = sel.sum(axis=1)
            q[gi] = (sel * sel).sum(axis=1)
        sums[name] = s
        sumsq[name] = q
    return EnsembleStats(
        n_traj=n_traj,
        group_size=gsize,
        group_ids=gids,
        times=res.times,
        labels=labels,
        counts=counts,
        sums=sums,
        sumsq=sumsq,
        group_n=group_n,
        dim=scenario.dim,
        metadata={
            "drift_abs_sum": res.drift_abs_sum,
            "drift_count": res.drift_count,
            "max_stop_step": int(res.stop_steps.max()),
        },
    )


def _blocks(n_traj: int, dim: int) -> list[tuple[int, int]]:
    b = block_size(n_traj, dim)
    return [(s, min(s + b, n_traj)) for s in range(0, n_traj, b)]


def run_ensemble(
    scenario: EnsembleScenario,
    n_traj: int,
    base_seed: int,
    schedule: Schedule,
    *,
    workers: int | None = 1,
) -> EnsembleStats:
    """Integrate ``n_traj`` trajectories and merge their statistics.

    ``workers=None`` uses every available core. The result does not depend
    on ``workers``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    blocks = _blocks(n_traj, scenario.dim)
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(blocks) == 1:
        parts = [_run_block(scenario, n_traj, base_seed, schedule, a, b) for a, b in blocks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(blocks))) as pool:
            futs = [pool.submit(_run_block, scenario, n_traj, base_seed, schedule, a, b) for a, b in blocks]
            parts = [f.result() for f in futs]
    out = EnsembleStats.merge(parts)
    out.metadata = {
        "base_seed": int(base_seed),
        "dt": schedule.dt,
        "n_steps": schedule.n_steps,
        "record_every": schedule.record_every,
        "completion_threshold": scenario.threshold,
        "drift_abs_mean": sum(p.metadata["drift_abs_sum"] for p in parts) / max(1, sum(p.metadata["drift_count"] for p in parts)),
        "max_stop_step": max(p.metadata["max_stop_step"] for p in parts),
    }
    if out.failed > MAX_FAILURE_FRACTION * n_traj:
        raise EnsembleError(f"{out.failed} of {n_traj} trajectories failed to integrate")
    return out


# --- tests on ensembles ---------------------------------------------------------

@dataclass
class BornVerdict:
    z_scores: dict[str, float]
    chi_square: float
    p_value: float
    passed: bool
    frequencies: dict[str, float]
    n: int
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "z_scores": self.z_scores,
            "chi_square": self.chi_square,
            "p_value": self.p_value,
            "pass": self.passed,
            "frequencies": self.frequencies,
            "n": self.n,
            "diagnostics": self.diagnostics,
        }


def born_test(stats_or_counts, expected: Mapping[str, float], *, alpha: float = 1e-3, z_max: float = 3.0) -> BornVerdict:
    """Compare resolved outcome counts against expected probabilities.

    Passes when the k-cell chi-square p-value is at least ``alpha`` and every
    per-label binomial z-score is within ``z_max``.
    """
    counts = stats_or_counts.outcome_counts if isinstance(stats_or_counts, EnsembleStats) else dict(stats_or_counts)
    total_p = sum(expected.values())
    if not math.isclose(total_p, 1.0, abs_tol=1e-9):
        raise ValueError(f"expected probabilities sum to {total_p}, not 1")
    labels = list(expected)
    n = sum(int(counts.get(lab, 0)) for lab in labels)
    diag = []
    z = {}
    passed = True
    for lab in labels:
        c, p = int(counts.get(lab, 0)), float(expected[lab])
        if p == 0.0:
            z[lab] = 0.0 if c == 0 else float("inf")
            if c:
                diag.append(f"label {lab!r} has probability 0 but {c} counts")
                passed = False
        elif p == 1.0:
            z[lab] = 0.0 if c == n else float("-inf")
            if c != n:
                diag.append(f"label {lab!r} has probability 1 but only {c} of {n} counts")
                passed = False
        else:
            z[lab] = (c - n * p) / math.sqrt(n * p * (1 - p)) if n else 0.0
    live = [lab for lab in labels if 0.0 < expected[lab]]
    if len(live) >= 2 and n:
        obs = np.array([counts.get(lab, 0) for lab in live], dtype=np.float64)
        exp = np.array([expected[lab] for lab in live]) * n
        exp *= obs.sum() / exp.sum()
        chi, pval = sps.chisquare(obs, exp)
        chi, pval = float(chi), float(pval)
    else:
        chi, pval = 0.0, 1.0
    if pval < alpha:
        passed = False
        diag.append(f"chi-square p = {pval:.3g} < {alpha}")
    if any(abs(v) > z_max for v in z.values() if np.isfinite(v)):
        passed = False
        diag.append(f"|z| > {z_max}")
    freqs = {lab: (int(counts.get(lab, 0)) / n if n else float("nan")) for lab in labels}
    return BornVerdict(z, chi, pval, passed, freqs, n, diag)


def joint_chi_square(verdicts: Sequence[BornVerdict], *, alpha: float = 1e-3) -> tuple[float, int, float, bool]:
    """Sum of independent chi-square statistics; returns (chi2, dof, p, pass)."""
    chi = sum(v.chi_square for v in verdicts)
    dof = sum(max(1, len(v.z_scores) - 1) for v in verdicts)
    p = float(sps.chi2.sf(chi, dof))
    return chi, dof, p, p >= alpha


# -- mean dynamics -------------------------------------------------------------

def lindblad_generator(H: HermitianOperator | None, terms: Sequence[CollapseTerm], dim: int, hbar: float = 1.0) -> np.ndarray:
    """Superoperator of the ensemble-mean evolution for fixed-rate terms.

    Expanding ``d(psi psi^H)`` to first order in ``dt`` with the Itô rule and
    averaging over the noise, the terms nonlinear in ``psi`` cancel and

        d rho/dt = -(i/hbar)[H, rho] + sum_i gamma_i (L_i rho L_i - 1/2 {L_i^2, rho})

    with ``L_i = k_i A_i``. Row-major vectorization: ``vec(X Y Z) = (X kron Z^T) vec(Y)``.
    """
    eye = np.eye(dim)
    gen = np.zeros((dim * dim, dim * dim), dtype=np.complex128)
    if H is not None:
        h = H.entries
        gen += (-1j / hbar) * (np.kron(h, eye) - np.kron(eye, h.T))
    if len(terms) > 1:
        # one shared noise: the jump operator is the rate-weighted sum
        L = sum(np.sqrt(t.rate) * t.strength * t.operator.entries for t in terms)
        ls = [(1.0, L)]
    else:
        ls = [(t.rate, t.strength * t.operator.entries) for t in terms]
    for g, L in ls:
        L2 = L @ L
        gen += g * (np.kron(L, L.T) - 0.5 * np.kron(L2, eye) - 0.5 * np.kron(eye, L2.T))
    return gen


def mean_density_oracle(rho0: np.ndarray, H, terms, times, hbar: float = 1.0) -> np.ndarray:
    """E[rho](t) from the deterministic mean evolution, shape ``(len(times), d, d)``."""
    from scipy.linalg import expm

    rho0 = np.asarray(rho0, dtype=np.complex128)
    d = rho0.shape[0]
    gen = lindblad_generator(H, terms, d, hbar)
    out = np.empty((len(times), d, d), dtype=np.complex128)
    for i, t in enumerate(times):
        out[i] = (expm(gen * t) @ rho0.reshape(-1)).reshape(d, d)
    return out


@dataclass
class DensityCheck:
    max_deviation: float
    stderr_at_max: float
    z_at_max: float
    max_z: float


def mean_density_check(stats: EnsembleStats, reference) -> DensityCheck:
    """Largest element-wise deviation of the ensemble-mean density matrix
    from ``reference``, either an array ``(n_records, d, d)`` or a callable
    of the record times.
    """
    if stats.dim > DENSITY_MAX_DIM:
        raise ValueError(f"mean density is only retained for dim <= {DENSITY_MAX_DIM}")
    ref = reference(stats.times) if callable(reference) else np.asarray(reference)
    mean = stats.mean_density
    se = _density_from(stats.stderr, stats.dim)
    # stderr of real and imaginary parts combined in quadrature
    se_abs = np.abs(se)
    dev = np.abs(mean - ref)
    i = np.unravel_index(np.argmax(dev), dev.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se_abs > 0, dev / se_abs, np.where(dev > 1e-12, np.inf, 0.0))
    return DensityCheck(float(dev[i]), float(se_abs[i]), float(z[i]), float(np.max(z)))


def fit_decay_rate(stats: EnsembleStats, name: str = "rho[0,1].re", *, t_max: float | None = None) -> tuple[float, float]:
    """Least-squares slope of ``-log(mean series)`` against time, with a
    jackknife standard error. Only records with ``t <= t_max`` enter."""
    t = stats.times
    sel = np.ones(t.shape, dtype=bool) if t_max is None else (t <= t_max)

    def est(mean_of):
        y = mean_of(name)[sel]
        good = y > 0
        tt = t[sel][good]
        ly = np.log(y[good])
        return -np.polyfit(tt, ly, 1)[0]

    lam, se = stats.jackknife(est)
    return float(lam), float(se)


# -- no signaling ------------------------------------------------------------------

@dataclass
class SignalingVerdict:
    trace_distance: float
    stderr: float
    passed: bool
    n_sigma: float


def reduced_b_observables(part: BipartitePartition) -> dict:
    obs = {}
    for i in range(part.b):
        for j in range(i, part.b):
            obs[f"rhoB[{i},{j}].re"] = ReducedDensityElement(part, "b", i, j, "re")
            if i != j:
                obs[f"rhoB[{i},{j}].im"] = ReducedDensityElement(part, "b", i, j, "im")
    return obs


def no_signaling_test(
    initial: StateVector,
    part: BipartitePartition,
    a_operator: HermitianOperator,
    *,
    n_traj: int,
    schedule: Schedule,
    seed: int = 0,
    strength: float = 1.0,
    gamma: float = 1.0,
    collapse_on_A: bool = True,
    negative_control: bool = False,
    n_sigma: float = 5.0,
    workers: int | None = 1,
) -> SignalingVerdict:
    """Trace distance between ensemble-mean reduced states of B with and
    without the A-side collapse term.

    The collapse operator acts as ``a_operator (x) 1_B`` and there is no
    Hamiltonian coupling, so any nonzero distance beyond Monte Carlo error
    would be a signal. ``negative_control`` replaces the unbiased increments
    with ``|dxi|``, which must be detected.
    """
    if a_operator.dim != part.a or part.total != initial.basis_dim:
        raise ValueError("partition mismatch between state, operator and split")
    full = HermitianOperator(np.kron(a_operator.entries, np.eye(part.b)))
    obs = reduced_b_observables(part)

    def run(with_collapse: bool) -> EnsembleStats:
        terms = (CollapseTerm(full, strength, gamma),) if with_collapse else ()
        sc = EnsembleScenario(initial, None, terms, threshold=None, observables=obs, bias=negative_control and with_collapse)
        return run_ensemble(sc, n_traj, seed, schedule, workers=workers)

    on = run(collapse_on_A)
    off = run(False)
    rho_off = _density_from(off.mean, part.b, "rhoB")[-1]

    def est(mean_of):
        rho_on = _density_from(mean_of, part.b, "rhoB")[-1]
        return trace_distance(rho_on, rho_off)

    dist, se = on.jackknife(est)
    dist, se = float(dist), float(se)
    if not np.isfinite(se) or se == 0.0:
        passed = dist <= 1e-12
    else:
        passed = dist <= n_sigma * se
    return SignalingVerdict(dist, se, passed, dist / se if se > 0 else float("inf") if dist > 0 else 0.0)
