"""Reproducible Itô increments for the single global white-noise process.

Sampling algorithm
------------------
Every trajectory owns a Philox-4x64 counter-based stream keyed by the
128-bit pair ``(seed, trajectory_index)``. Step ``i`` consumes raw words
``2i`` and ``2i + 1`` of that stream. Each word is mapped to a uniform in
``(0, 1)`` by ``((w >> 11) + 0.5) * 2**-53`` and the pair goes through the
Box–Muller transform::

    r  = sqrt(-2 log u1)
    z0 = r cos(2 pi u2)
    z1 = r sin(2 pi u2)

Real noise uses ``dxi = sqrt(dt) z0``; complex noise uses
``dxi = sqrt(dt / 2) (z0 + i z1)`` so that ``E[dxi dxi*] = dt`` and
``E[dxi^2] = 0``. An increment is therefore a pure function of
``(seed, trajectory_index, step)``. The mapping is fixed for a release;
bit-exact agreement across platforms with different ``libm`` is not
promised.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

SEED_ENV_VAR = "COLLAPSE_SEED"
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseConfig:
    seed: int
    dt: float
    complex_noise: bool = False
    trajectory_index: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt!r}")
        for name in ("seed", "trajectory_index"):
            v = getattr(self, name)
            if not (0 <= int(v) <= _U64):
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer")

    def for_trajectory(self, index: int) -> "NoiseConfig":
        return NoiseConfig(self.seed, self.dt, self.complex_noise, index)


@dataclass(frozen=True)
class NoisePath:
    increments: np.ndarray
    dt: float

    @property
    def n_steps(self) -> int:
        return self.increments.shape[-1]

    def quadratic_variation(self) -> float:
        """sum of dxi dxi* over the path"""
        return float(np.sum(np.abs(self.increments) ** 2))


def _uniforms(words: np.ndarray) -> np.ndarray:
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def _box_muller(raw: np.ndarray, complex_noise: bool) -> tuple[np.ndarray, np.ndarray | None]:
    u1 = _uniforms(raw[..., 0::2])
    u2 = _uniforms(raw[..., 1::2])
    r = np.sqrt(-2.0 * np.log(u1))
    phase = 2.0 * np.pi * u2
    z0 = r * np.cos(phase)
    if not complex_noise:
        return z0, None
    return z0, r * np.sin(phase)


class NoiseStream:
    """Sequential reader over one trajectory's increments.

    ``next(n)`` returns the increments of the next ``n`` steps; calling it in
    chunks gives the same values as one call over the whole range.
    """

    def __init__(self, cfg: NoiseConfig, start_step: int = 0):
        self.cfg = cfg
        self._bg = np.random.Philox(key=np.array([cfg.seed, cfg.trajectory_index], dtype=np.uint64))
        self.step = 0
        if start_step:
            self.skip(start_step)

    def skip(self, n: int) -> None:
        if n < 0:
            raise ValueError("cannot skip backwards")
        # one Philox counter increment yields four words = two steps
        if self.step % 2 == 0 and n >= 2:
            self._bg.advance(n // 2)
            self.step += 2 * (n // 2)
            n -= 2 * (n // 2)
        if n:
            self.next(n)

    def next_standard(self, n: int) -> tuple[np.ndarray, np.ndarray | None]:
        raw = self._bg.random_raw(2 * n)
        self.step += n
        return _box_muller(raw, self.cfg.complex_noise)

    def next(self, n: int) -> np.ndarray:
        z0, z1 = self.next_standard(n)
        if z1 is None:
            return np.sqrt(self.cfg.dt) * z0
        return np.sqrt(0.5 * self.cfg.dt) * (z0 + 1j * z1)


def sample_path(cfg: NoiseConfig, n_steps: int) -> NoisePath:
    """Draw ``n_steps`` increments for one trajectory."""
    if int(n_steps) < 1:
        raise ValueError("n_steps must be >= 1")
    inc = NoiseStream(cfg).next(int(n_steps))
    inc.setflags(write=False)
    return NoisePath(inc, cfg.dt)


class BatchNoise:
    """Increments for a block of trajectories, one :class:`NoiseStream` each.

    ``next(n)`` returns an array of shape ``(n, len(indices))``.
    """

    def __init__(self, cfg: NoiseConfig, indices):
        self.cfg = cfg
        self.indices = np.asarray(indices, dtype=np.uint64)
        self._streams = [NoiseStream(cfg.for_trajectory(int(i))) for i in self.indices]

    def next(self, n: int) -> np.ndarray:
        raw = np.stack([s._bg.random_raw(2 * n) for s in self._streams])
        for s in self._streams:
            s.step += n
        z0, z1 = _box_muller(raw, self.cfg.complex_noise)
        if z1 is None:
            out = np.sqrt(self.cfg.dt) * z0
        else:
            out = np.sqrt(0.5 * self.cfg.dt) * (z0 + 1j * z1)
        return np.ascontiguousarray(out.T)


def resolve_seed(cli_seed: int | None = None, default: int = 0) -> int:
    """CLI flag beats the ``COLLAPSE_SEED`` environment variable beats ``default``."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None and env.strip():
        value = int(env.strip(), 10)
        if not (0 <= value <= _U64):
            raise ValueError(f"{SEED_ENV_VAR} must be a 64-bit unsigned integer")
        return value
    return default


# --- Itô audits -----------------------------------------------------------

def ito_variance_statistic(cfg: NoiseConfig, n_paths: int, n_steps: int) -> dict:
    """Per-path ratio ``(sum dxi dxi*) / (n dt)`` summarised over paths.

    Returns the mean, its standard error and the z-score against 1.
    """
    ratios = np.empty(n_paths)
    chunk = 1 << 16
    for p in range(n_paths):
        stream = NoiseStream(cfg.for_trajectory(cfg.trajectory_index + p))
        acc, left = 0.0, n_steps
        while left:
            m = min(chunk, left)
            acc += float(np.sum(np.abs(stream.next(m)) ** 2))
            left -= m
        ratios[p] = acc / (n_steps * cfg.dt)
    mean = float(ratios.mean())
    se = float(ratios.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else float("nan")
    return {"mean": mean, "stderr": se, "z": (mean - 1.0) / se if se > 0 else float("nan"), "ratios": ratios}


def dt_dxi_ratio(seed: int, dt: float, t_total: float, n_paths: int = 20) -> float:
    """Mean of ``|sum dt dxi| / sum |dxi|^2`` over paths for a fixed horizon.

    The numerator is O(sqrt(n) dt^{3/2}) and the denominator O(n dt), so the
    ratio shrinks like sqrt(dt) as the step is refined.
    """
    n = max(1, int(round(t_total / dt)))
    vals = []
    for p in range(n_paths):
        inc = sample_path(NoiseConfig(seed, dt, trajectory_index=p), n).increments
        vals.append(abs(dt * inc.sum()) / np.sum(np.abs(inc) ** 2))
    return float(np.mean(vals))


def cross_correlation(seed: int, dt: float, n_steps: int, n_pairs: int) -> dict:
    """Sample correlation between paths with disjoint trajectory indices.

    Returns the mean correlation over pairs, its standard error and z-score.
    """
    cors = np.empty(n_pairs)
    for p in range(n_pairs):
        a = sample_path(NoiseConfig(seed, dt, trajectory_index=2 * p), n_steps).increments
        b = sample_path(NoiseConfig(seed, dt, trajectory_index=2 * p + 1), n_steps).increments
        cors[p] = np.corrcoef(a, b)[0, 1]
    mean = float(cors.mean())
    se = float(cors.std(ddof=1) / np.sqrt(n_pairs))
    return {"mean": mean, "stderr": se, "z": mean / se}
