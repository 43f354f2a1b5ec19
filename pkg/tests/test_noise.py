import numpy as np
import pytest

from collapsesim.noise import (
    SEED_ENV_VAR,
    BatchNoise,
    NoiseConfig,
    NoiseStream,
    cross_correlation,
    dt_dxi_ratio,
    ito_variance_statistic,
    resolve_seed,
    sample_path,
)


def test_same_key_same_path():
    cfg = NoiseConfig(7, 1e-3, trajectory_index=3)
    a = sample_path(cfg, 1000).increments
    b = sample_path(cfg, 1000).increments
    assert a.tobytes() == b.tobytes()


def test_different_index_different_path():
    a = sample_path(NoiseConfig(7, 1e-3, trajectory_index=0), 100).increments
    b = sample_path(NoiseConfig(7, 1e-3, trajectory_index=1), 100).increments
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("dt", [0.0, -1.0, float("nan"), float("inf")])
def test_bad_dt_rejected(dt):
    with pytest.raises(ValueError):
        NoiseConfig(0, dt)


def test_chunked_reads_match_single_read():
    cfg = NoiseConfig(11, 0.01)
    whole = NoiseStream(cfg).next(101)
    s = NoiseStream(cfg)
    parts = np.concatenate([s.next(1), s.next(50), s.next(3), s.next(47)])
    assert np.array_equal(whole, parts)


@pytest.mark.parametrize("skip", [0, 1, 2, 7, 64])
def test_skip_matches_reading(skip):
    cfg = NoiseConfig(5, 0.1)
    whole = NoiseStream(cfg).next(skip + 10)
    assert np.array_equal(NoiseStream(cfg, start_step=skip).next(10), whole[skip:])


def test_batch_noise_matches_streams():
    cfg = NoiseConfig(9, 0.5)
    batch = BatchNoise(cfg, [4, 2, 9]).next(20)
    for col, idx in enumerate([4, 2, 9]):
        assert np.array_equal(batch[:, col], sample_path(cfg.for_trajectory(idx), 20).increments)


def test_box_muller_reference_values():
    # oracle: the documented mapping applied to raw Philox words
    cfg = NoiseConfig(123, 0.25)
    raw = np.random.Philox(key=np.array([123, 0], dtype=np.uint64)).random_raw(4)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) / 2.0**53
    z = np.sqrt(-2 * np.log(u[[0, 2]])) * np.cos(2 * np.pi * u[[1, 3]])
    assert np.allclose(sample_path(cfg, 2).increments, 0.5 * z, rtol=0, atol=1e-15)


def test_complex_noise_moments():
    inc = sample_path(NoiseConfig(1, 1.0, complex_noise=True), 200_000).increments
    assert np.mean(np.abs(inc) ** 2) == pytest.approx(1.0, abs=0.02)
    assert abs(np.mean(inc ** 2)) < 0.02


def test_ito_variance_statistic():
    r = ito_variance_statistic(NoiseConfig(0, 1e-3), 100, 10_000)
    assert abs(r["z"]) <= 5.0
    assert r["mean"] == pytest.approx(1.0, abs=0.01)


def test_quadratic_variation_close_to_elapsed_time():
    path = sample_path(NoiseConfig(2, 1e-4), 100_000)
    # std of the ratio is sqrt(2 / n) ~ 0.0045
    assert path.quadratic_variation() == pytest.approx(10.0, rel=0.025)


def test_dt_dxi_ratio_decreases():
    r = [dt_dxi_ratio(0, dt, 1.0) for dt in (1e-2, 1e-3, 1e-4)]
    assert r[0] > r[1] > r[2]


def test_streams_uncorrelated():
    cc = cross_correlation(3, 1e-3, 10_000, 30)
    assert abs(cc["z"]) <= 5.0


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    assert resolve_seed(None, default=4) == 4
    monkeypatch.setenv(SEED_ENV_VAR, "17")
    assert resolve_seed(None) == 17
    assert resolve_seed(3) == 3
    monkeypatch.setenv(SEED_ENV_VAR, "-1")
    with pytest.raises(ValueError):
        resolve_seed(None)
