"""Acceptance suite: one PASS/FAIL line per criterion, printed even under capture."""

import math

import numpy as np
import pytest

from collapsesim import interaction as ia
from collapsesim import lorentz as lz
from collapsesim.ensemble import (
    EnsembleScenario,
    fit_decay_rate,
    joint_chi_square,
    no_signaling_test,
    run_ensemble,
)
from collapsesim.integrator import CollapseTerm, Schedule, norm_drift
from collapsesim.noise import NoiseConfig, ito_variance_statistic
from collapsesim.state import BipartitePartition, HermitianOperator, StateVector, deviation_apply
from collapsesim.twolevel import (
    CappedRandomStep,
    FixedStep,
    TwoLevelSpec,
    born_experiment,
    born_verdict,
    gambler_ruin_oracle,
    tangent_term,
)

SZ = HermitianOperator.diagonal([1.0, -1.0])
N = 10_000


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


def sigma(p, n):
    return math.sqrt(p * (1 - p) / n)


def test_c01_born_rule(report):
    verdicts, lines, ok = [], [], True
    for b2 in (0.1, 0.3, 0.5, 0.7, 0.9):
        spec = TwoLevelSpec.from_beta2(b2)
        c = born_experiment(spec, N, seed=1)
        v = born_verdict(c, spec)
        verdicts.append(v)
        n = c.count_x + c.count_y
        within = abs(c.frequency_y - b2) <= 3 * sigma(b2, n)
        ok &= within and not c.flagged
        lines.append(f"b2={b2}: f={c.frequency_y:.4f} z={v.z_scores['y']:+.2f} unresolved={c.unresolved}")
    chi, dof, p, joint = joint_chi_square(verdicts)
    ok &= joint
    report(1, ok, "; ".join(lines) + f"; joint chi2={chi:.2f} dof={dof} p={p:.3f}")
    assert ok


def test_c02_gamblers_ruin(report):
    ok, parts = True, []
    for rule in (FixedStep(0.05), CappedRandomStep(0.1)):
        for p in (0.25, 0.5, 0.75):
            est = gambler_ruin_oracle(p, rule, n_walks=N, seed=2)
            z = (est - p) / sigma(p, N)
            ok &= abs(z) <= 3
            parts.append(f"{type(rule).__name__} p={p}: {est:.4f} (z={z:+.2f})")
    report(2, ok, "; ".join(parts))
    assert ok


def test_c03_tangent_identity(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(N):
        spec = TwoLevelSpec.from_beta2(rng.uniform(), a=rng.uniform(-5, 5), b=rng.uniform(-5, 5), k=rng.uniform(-3, 3))
        coef, tan = tangent_term(spec)
        ref = deviation_apply(spec.operator, spec.state, spec.k)
        worst = max(worst, float(np.max(np.abs(coef * tan.amplitudes - ref))))
    ok = worst <= 1e-12
    report(3, ok, f"max |difference| over {N} specs = {worst:.2e}")
    assert ok


def test_c04_martingales(report):
    b2 = 0.3
    sc = EnsembleScenario(StateVector([math.sqrt(1 - b2), math.sqrt(b2)]), None, (CollapseTerm(SZ),), threshold=None,
                          branches={"x": np.array([True, False]), "y": np.array([False, True])})
    st = run_ensemble(sc, 1000, 4, Schedule(1e-3, 3000, 100))
    w, se = st.mean("w_y"), st.stderr("w_y")
    zw = float(np.max(np.abs(w[1:] - w[0]) / se[1:]))
    m = ia.simulate_measurement(ia.reference_scattering(16, c2=0.5), 1000, 4, Schedule(1e-3, 2000, 100))
    p, sp = m.stats.mean("P"), m.stats.stderr("P")
    zp = float(np.max(np.abs(p[1:] - p[0]) / sp[1:]))
    ok = zw <= 5 and zp <= 5
    report(4, ok, f"max z of beta^2(t) = {zw:.2f}; max z of <P_total>(t) = {zp:.2f}; "
                  f"int gamma = {m.stats.mean('gamma_integral')[-1]:.3f}")
    assert ok


def test_c05_decay_rate(report):
    st = run_ensemble(EnsembleScenario(StateVector([1 / math.sqrt(2)] * 2), None, (CollapseTerm(SZ),), threshold=None),
                      N, 5, Schedule(1e-3, 1000, 50))
    lam, se = fit_decay_rate(st)
    # Ito expansion: d rho01 = -gamma k^2 (a - b)^2 / 2 rho01 dt = -2 rho01 dt
    ok = abs(lam - 2.0) / 2.0 <= 0.10
    report(5, ok, f"fitted rate {lam:.4f} +- {se:.4f}, expected 2.0")
    assert ok


def test_c06_no_signaling(report):
    bell = StateVector([1 / math.sqrt(2), 0, 0, 1 / math.sqrt(2)])
    part, sched = BipartitePartition(2, 2), Schedule(1e-3, 500, 100)
    v = no_signaling_test(bell, part, SZ, n_traj=N, schedule=sched, seed=6)
    ctrl = no_signaling_test(bell, part, SZ, n_traj=N, schedule=sched, seed=6, negative_control=True)
    ok = v.passed and not ctrl.passed
    report(6, ok, f"trace distance {v.trace_distance:.2e} ({v.n_sigma:.2f} SE); "
                  f"negative control {ctrl.trace_distance:.2e} ({ctrl.n_sigma:.1f} SE, detected={not ctrl.passed})")
    assert ok


def test_c07_rate_parameter(report):
    s = ia.reference_scattering(16, c2=1.0)
    _, vecs = ia.build_hamiltonian(s).eigh()
    g_stat, _ = ia.gamma_rate(StateVector.normalized(vecs[:, 0]), s, ia.RateState(), 1e-3)
    far = ia.InteractionScenario(1.0, 1.0, ia.GaussianWell(1.0, 1.0),
                                 ia.PacketPair(ia.WavePacket(8.0, 1.5, 0.0), ia.WavePacket(40.0, 1.5, 0.0)),
                                 ia.GridSpec(64), c2=1.0)
    g_far = float(np.max(ia.reference_run(far, Schedule(1e-3, 1000, 100)).series["gamma"]))
    ref = ia.reference_scattering(32)
    dt = ia.default_dt(ref)
    n = int(round(16.0 / dt))
    r = ia.reference_run(ref, Schedule(dt, n, n // 100))
    ok = g_stat <= 1e-8 and g_far <= 1e-8 and 0.1 <= r.gamma_integral <= 10
    report(7, ok, f"stationary gamma {g_stat:.1e}; far-separated gamma {g_far:.1e}; "
                  f"reference int gamma dt = {r.gamma_integral:.3f} (retrospective {r.retrospective_integral:.3f})")
    assert ok


def test_c08_conservation(report):
    from collapsesim.integrator import integrate_batch

    s = ia.InteractionScenario(1.0, 1.0, ia.GaussianWell(1.0, 1.5),
                               ia.MomentumEigenstate(3, ia.WavePacket(4.0, 1.5, -0.5)), ia.GridSpec(16), c2=0.5)
    sc = ia.measurement_scenario(s)
    res = integrate_batch(sc.initial, sc.H, sc.terms, Schedule(1e-3, 2000, 50), NoiseConfig(8, 1e-3),
                          np.arange(8), threshold=None, observables=sc.observables)
    pvar = float(np.max(res.series["P_var"]))

    free = ia.InteractionScenario(1.0, 1.0, ia.NoPotential(),
                                  ia.PacketPair(ia.WavePacket(4, 1.5, 0.8), ia.WavePacket(11, 1.5, -0.3)),
                                  ia.GridSpec(16), c2=1.0)
    sched = Schedule(1e-3, 300, 30)
    m = ia.measurement_scenario(free)
    out = integrate_batch(m.initial, m.H, m.terms, sched, NoiseConfig(8, 1e-3), np.arange(4), threshold=None,
                          keep_states=True)
    h = ia.build_hamiltonian(free).entries
    v = ia.initial_state(free).amplitudes.copy()
    oracle = [v]
    for _ in range(sched.n_steps):
        v = v - 1j * sched.dt * (h @ v)
        v = v / np.linalg.norm(v)
        oracle.append(v)
    oracle = np.array(oracle)[sched.record_steps()]
    dev = float(np.max(np.abs(out.states - oracle[:, None])))
    ok = pvar <= 1e-10 and dev <= 1e-10
    report(8, ok, f"max P variance {pvar:.1e}; V=0 deviation from Schrodinger reference {dev:.1e}")
    assert ok


def test_c09_scale_estimates(report):
    est = lz.electron_estimates()
    dt_ok = abs(est["dt_int"] / 2.5e-17 - 1) <= 0.1
    nl_ok = lz.order_of_magnitude_agrees(est["nonlinearity"], 1e-9)
    fr_ok = lz.order_of_magnitude_agrees(est["fraction"], 0.01)
    ok = dt_ok and nl_ok and fr_ok
    report(9, ok, f"dt_int {est['dt_int']:.3e} s vs 2.5e-17; nonlinearity {est['nonlinearity']:.2e} vs 1e-9; "
                  f"fraction {est['fraction']:.2e} vs 0.01")
    assert ok


def test_c10_lorentz(report):
    boosts = [lz.Boost(u) for u in (0.1, 0.3, 0.5, 0.7, 0.9, 0.99)]
    ratio = lz.ratio_invariance(lz.electron_pair(27.2, 0.0), boosts)
    t = np.linspace(0, 10, 2001)
    series = np.column_stack([t, np.exp(-0.5 * (t - 5) ** 2)])
    integ = max(lz.rate_integral_invariance(series, b)[2] for b in boosts)
    ito = ito_variance_statistic(NoiseConfig(10, 1e-3), 100, 10_000)
    ms = lz.noise_mean_square_invariance(series, lz.Boost(0.6), n_paths=1000, seed=10)
    ok = ratio <= 1e-12 and integ <= 1e-12 and abs(ito["z"]) <= 5 and ms.passed
    report(10, ok, f"ratio deviation {ratio:.1e}; integral deviation {integ:.1e}; Ito variance z={ito['z']:+.2f}; "
                   f"mean-square z={ms.z:+.2f}")
    assert ok


def test_c11_norm_drift_order(report):
    psi = StateVector([math.sqrt(0.7), math.sqrt(0.3)])
    runs = [norm_drift(psi, None, [CollapseTerm(SZ)], dt, 0.2, n_traj=200, seed=11) for dt in (2e-3, 1e-3, 5e-4)]
    drift = [runs[i]["drift"] / runs[i + 1]["drift"] for i in range(2)]
    resid = [runs[i]["residual"] / runs[i + 1]["residual"] for i in range(2)]
    target = 2 ** 1.5
    ok = all(abs(r / target - 1) <= 0.25 for r in drift)
    report(11, ok, f"pre-norm drift halving ratios {drift[0]:.3f}, {drift[1]:.3f} (target {target:.3f} +-25%); "
                   f"after removing the Ito term ||G psi||^2 (dxi^2 - dt) the ratios are {resid[0]:.3f}, {resid[1]:.3f}")
    assert ok
