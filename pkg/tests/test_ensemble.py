import math

import numpy as np
import pytest

from collapsesim.ensemble import (
    EnsembleScenario,
    EnsembleStats,
    Expectation,
    _blocks,
    _run_block,
    born_test,
    fit_decay_rate,
    joint_chi_square,
    lindblad_generator,
    mean_density_check,
    mean_density_oracle,
    no_signaling_test,
    run_ensemble,
)
from collapsesim.integrator import CollapseTerm, Schedule
from collapsesim.state import BipartitePartition, HermitianOperator, StateVector

S = 1 / math.sqrt(2)
SZ = HermitianOperator.diagonal([1.0, -1.0])
SX = HermitianOperator([[0.0, 1.0], [1.0, 0.0]])


def two_level(gamma=1.0, H=None, psi=(S, S), threshold=None):
    return EnsembleScenario(StateVector(psi), H, (CollapseTerm(SZ, 1.0, gamma),), threshold=threshold)


def big_scenario():
    d = 4096
    rng = np.random.default_rng(0)
    psi = StateVector.normalized(rng.normal(size=d))
    op = HermitianOperator.diagonal(np.linspace(-1, 1, d))
    return EnsembleScenario(psi, None, (CollapseTerm(op, 1.0, 1.0),), threshold=None,
                            observables={"O": Expectation(op)})


def test_workers_do_not_change_result():
    sc = big_scenario()
    assert len(_blocks(600, sc.dim)) > 1
    sched = Schedule(1e-3, 4, 2)
    a = run_ensemble(sc, 600, 3, sched, workers=1)
    b = run_ensemble(sc, 600, 3, sched, workers=2)
    assert a == b


def test_merge_order_and_grouping():
    sc = two_level()
    sched = Schedule(1e-3, 50, 10)
    n = 300
    parts = [_run_block(sc, n, 1, sched, lo, hi) for lo, hi in ((0, 90), (90, 210), (210, 300))]
    ref = EnsembleStats.merge(parts)
    assert EnsembleStats.merge(parts[::-1]) == ref
    assert EnsembleStats.merge([EnsembleStats.merge(parts[:2]), parts[2]]) == ref
    with pytest.raises(ValueError):
        EnsembleStats.merge([parts[0], parts[0]])


def test_round_trip():
    st = run_ensemble(two_level(threshold=1 - 1e-6), 50, 2, Schedule(1e-3, 200, 20))
    back = EnsembleStats.from_dict(st.to_dict())
    assert back == st
    assert np.array_equal(back.mean("norm"), st.mean("norm"))


def test_born_test_examples():
    v = born_test({"x": 7000, "y": 3000}, {"x": 0.7, "y": 0.3})
    assert v.passed and v.z_scores["y"] == 0.0
    v = born_test({"x": 6880, "y": 3120}, {"x": 0.7, "y": 0.3})
    assert v.z_scores["y"] == pytest.approx(0.012 / math.sqrt(0.21 / 1e4), rel=1e-9)
    assert v.z_scores["y"] == pytest.approx(2.62, abs=0.01)
    assert v.passed
    v = born_test({"x": 6500, "y": 3500}, {"x": 0.7, "y": 0.3})
    assert v.z_scores["y"] == pytest.approx(10.9, abs=0.05)
    assert not v.passed


def test_born_test_zero_probability():
    v = born_test({"x": 10, "y": 1}, {"x": 1.0, "y": 0.0})
    assert not v.passed and v.diagnostics
    with pytest.raises(ValueError):
        born_test({"x": 1}, {"x": 0.5})


def test_joint_chi_square_combines():
    vs = [born_test({"x": 700, "y": 300}, {"x": 0.7, "y": 0.3}) for _ in range(3)]
    chi, dof, p, ok = joint_chi_square(vs)
    assert chi == 0.0 and dof == 3 and p == 1.0 and ok


def test_generator_preserves_trace_and_hermiticity():
    gen = lindblad_generator(SX, [CollapseTerm(SZ, 1.3, 0.7)], 2)
    rho = np.array([[0.6, 0.2 - 0.1j], [0.2 + 0.1j, 0.4]])
    d = (gen @ rho.reshape(-1)).reshape(2, 2)
    assert abs(np.trace(d)) < 1e-14
    assert np.allclose(d, d.conj().T, atol=1e-14)
    # pure dephasing: off-diagonal rate gamma k^2 (a - b)^2 / 2
    gen = lindblad_generator(None, [CollapseTerm(SZ, 1.0, 1.0)], 2)
    assert (gen @ np.array([0, 1, 0, 0]))[1] == pytest.approx(-2.0)


def test_mean_density_matches_oracle_with_hamiltonian():
    H = HermitianOperator(0.8 * SX.entries)
    sc = two_level(gamma=0.5, H=H, psi=(1.0, 0.0))
    st = run_ensemble(sc, 2000, 4, Schedule(1e-3, 2000, 100))
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    chk = mean_density_check(st, lambda t: mean_density_oracle(rho0, H, sc.terms, t))
    assert chk.max_z <= 5.0
    assert chk.max_deviation < 0.05


def test_eigenstate_density_constant():
    st = run_ensemble(two_level(psi=(1.0, 0.0)), 100, 0, Schedule(1e-3, 100, 10))
    chk = mean_density_check(st, np.repeat(np.diag([1.0, 0.0])[None], st.times.size, axis=0))
    assert chk.max_deviation == 0.0


def test_zero_rate_follows_unitary_scheme():
    H = HermitianOperator([[0.3, 0.5 - 0.2j], [0.5 + 0.2j, -0.1]])
    psi0 = np.array([0.6, 0.8j])
    sched = Schedule(1e-3, 500, 50)
    st = run_ensemble(EnsembleScenario(StateVector(psi0), H, (CollapseTerm(SZ, 1.0, 0.0),), threshold=None),
                      20, 0, sched)
    # oracle: normalized Euler recursion for the Schrodinger equation alone
    v = psi0.astype(complex)
    ref = [v]
    for _ in range(sched.n_steps):
        v = v - 1j * sched.dt * (H.entries @ v)
        v = v / np.linalg.norm(v)
        ref.append(v)
    ref = np.array(ref)[sched.record_steps()]
    rho = np.einsum("ti,tj->tij", ref, ref.conj())
    assert np.max(np.abs(st.mean_density - rho)) <= 1e-10
    # and the scheme itself tracks exp(-iHt) to O(dt)
    from scipy.linalg import expm
    exact = expm(-1j * H.entries * sched.n_steps * sched.dt) @ psi0
    assert abs(abs(np.vdot(exact, ref[-1])) - 1) < 1e-3


def test_decay_rate_fit_small():
    st = run_ensemble(two_level(), 2000, 7, Schedule(1e-3, 1000, 50))
    lam, se = fit_decay_rate(st)
    assert abs(lam - 2.0) <= max(5 * se, 0.0)
    assert abs(lam - 2.0) / 2.0 < 0.15


def test_no_signaling_product_state():
    psi = StateVector(np.kron([S, S], [0.6, 0.8]))
    v = no_signaling_test(psi, BipartitePartition(2, 2), SZ, n_traj=500, schedule=Schedule(1e-3, 500, 100))
    assert v.passed
    assert v.trace_distance < 1e-12


def test_no_signaling_bell_and_control():
    bell = StateVector([S, 0, 0, S])
    part = BipartitePartition(2, 2)
    sched = Schedule(1e-3, 500, 100)
    ok = no_signaling_test(bell, part, SZ, n_traj=2000, schedule=sched, seed=1)
    assert ok.passed
    bad = no_signaling_test(bell, part, SZ, n_traj=2000, schedule=sched, seed=1, negative_control=True)
    assert not bad.passed


def test_no_signaling_rejects_mismatch():
    with pytest.raises(ValueError):
        no_signaling_test(StateVector([S, S]), BipartitePartition(2, 2), SZ, n_traj=2, schedule=Schedule(1e-3, 1))
