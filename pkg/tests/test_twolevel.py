import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collapsesim.state import deviation_apply
from collapsesim.twolevel import (
    CappedRandomStep,
    FixedStep,
    TwoLevelSpec,
    born_experiment,
    born_verdict,
    default_schedule,
    gambler_ruin_oracle,
    tangent_term,
    walk_coordinate,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        TwoLevelSpec(0.6, 0.6)
    with pytest.raises(ValueError):
        TwoLevelSpec(-0.6, 0.8)
    with pytest.raises(ValueError):
        TwoLevelSpec.from_beta2(1.2)


def test_tangent_endpoint_and_degenerate():
    assert tangent_term(TwoLevelSpec(1.0, 0.0))[0] == 0.0
    assert tangent_term(TwoLevelSpec(0.6, 0.8, a=2.0, b=2.0))[0] == 0.0


def test_tangent_half():
    s = 1 / math.sqrt(2)
    coef, tan = tangent_term(TwoLevelSpec(s, s))
    assert coef == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(tan.amplitudes, [s, -s], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3))
def test_tangent_identity(b2, a, b, k):
    spec = TwoLevelSpec.from_beta2(b2, a=a, b=b, k=k)
    coef, tan = tangent_term(spec)
    ref = deviation_apply(spec.operator, spec.state, k)
    assert np.max(np.abs(coef * tan.amplitudes - ref)) <= 1e-12 * max(1.0, abs(k) * abs(a - b))


def test_walk_coordinate():
    assert walk_coordinate(1.0, 0.0) == 0.0
    assert walk_coordinate(0.0, 1.0) == 1.0
    assert walk_coordinate(math.sqrt(0.7), math.sqrt(0.3)) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValueError):
        walk_coordinate(0.5, 0.5)


def _sigma(p, n):
    return math.sqrt(p * (1 - p) / n)


def test_gambler_ruin_endpoints():
    assert gambler_ruin_oracle(1.0) == 1.0
    assert gambler_ruin_oracle(0.0) == 0.0


@pytest.mark.parametrize("rule", [FixedStep(0.05), CappedRandomStep(0.1)])
@pytest.mark.parametrize("p", [0.25, 0.5])
def test_gambler_ruin(p, rule):
    est = gambler_ruin_oracle(p, rule, n_walks=10_000, seed=1)
    assert abs(est - p) <= 3 * _sigma(p, 10_000)


def test_gambler_ruin_deterministic():
    assert gambler_ruin_oracle(0.3, CappedRandomStep(), 2000, seed=4) == gambler_ruin_oracle(0.3, CappedRandomStep(), 2000, seed=4)


def test_default_schedule_budget():
    spec = TwoLevelSpec.from_beta2(0.3)
    sched = default_schedule(spec)
    # rate gamma k^2 (a-b)^2 = 4; dt = 1e-3 / 4; 50 time constants
    assert sched.dt == pytest.approx(2.5e-4)
    assert sched.n_steps * sched.dt * spec.collapse_rate == pytest.approx(50.0, rel=1e-3)


def test_born_eigenstate_never_flips():
    c = born_experiment(TwoLevelSpec.from_beta2(0.0), 500, seed=0)
    assert c.count_y == 0 and c.count_x == 500 and not c.flagged


def test_born_frequency_small():
    spec = TwoLevelSpec.from_beta2(0.3)
    c = born_experiment(spec, 2000, seed=5)
    assert c.unresolved <= 0.01 * 2000
    assert abs(c.frequency_y - 0.3) <= 3 * _sigma(0.3, c.count_x + c.count_y)
    assert born_verdict(c, spec).passed


def test_commuting_hamiltonian_leaves_statistics():
    spec = TwoLevelSpec.from_beta2(0.5)
    with_h = born_experiment(spec, 2000, seed=6, hamiltonian_scale=0.7)
    without = born_experiment(spec, 2000, seed=6)
    for c in (with_h, without):
        assert abs(c.frequency_y - 0.5) <= 3 * _sigma(0.5, 2000)
    # H commutes with O, so each trajectory picks the same branch up to step-size effects
    assert abs(with_h.count_y - without.count_y) <= 3 * math.sqrt(2000) * 0.5


def test_born_rejects_degenerate():
    with pytest.raises(ValueError):
        born_experiment(TwoLevelSpec.from_beta2(0.5, a=1.0, b=1.0), 10)
