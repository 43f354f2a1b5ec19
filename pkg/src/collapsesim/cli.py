"""Command-line entry point.

Subcommands: ``born-test``, ``simulate-interaction``, ``lorentz-check``,
``ensemble`` and ``noise-audit``. Each accepts an optional JSON config
(``--config``) whose fields can be overridden by flags; configs must carry
``"version": 1`` and unknown keys are rejected.

Exit codes: 0 when every assertion of the run passes, 1 when one fails,
2 for configuration errors (details as JSON on stderr).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Discriminator, Field, Tag, ValidationError, field_validator

from . import __version__, constants, interaction as ia, lorentz as lz, noise as nz, twolevel as tl
from .ensemble import EnsembleScenario, EnsembleStats, born_test, joint_chi_square, run_ensemble
from .integrator import COMPLETION_THRESHOLD, CollapseTerm, Schedule, default_dt
from .state import HermitianOperator, StateVector

CONFIG_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


# --- config schema ----------------------------------------------------------------

class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class _Versioned(_Model):
    version: Literal[1]


class BornConfig(_Versioned):
    beta2: list[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    n: int = Field(10_000, ge=1)
    dt: float | None = Field(None, gt=0)
    gamma: float = Field(1.0, gt=0)
    k: float = 1.0
    a: float = 1.0
    b: float = -1.0
    hamiltonian_scale: float = 0.0
    threshold: float = Field(COMPLETION_THRESHOLD, gt=0.5, lt=1.0)
    alpha: float = Field(1e-3, gt=0, lt=1)
    z_max: float = Field(3.0, gt=0)

    @field_validator("beta2")
    @classmethod
    def _unit_interval(cls, v):
        if not v or any(not 0.0 <= x <= 1.0 for x in v):
            raise ValueError("beta2 values must lie in [0, 1]")
        return v


class GridModel(_Model):
    n_points: int
    spacing: float = 1.0
    boundary: Literal["periodic", "hard-wall"] = "periodic"


class PotentialModel(_Model):
    kind: Literal["softened-coulomb", "gaussian-well", "none"]
    charge_product: float = 1.0
    softening: float | None = None
    depth: float = 1.0
    width: float = 1.0


class PacketModel(_Model):
    center: float
    width: float = Field(gt=0)
    momentum: float = 0.0


class PairModel(_Model):
    j: PacketModel
    k: PacketModel


class InitialModel(_Model):
    kind: Literal["packet-pair", "branches", "momentum-eigenstate"]
    j: PacketModel | None = None
    k: PacketModel | None = None
    branches: list[PairModel] | None = None
    weights: list[float] | None = None
    classify_by: Literal["j", "k"] = "k"
    labels: list[str] | None = None
    total_index: int = 0
    relative: PacketModel | None = None


class ScenarioModel(_Model):
    m_j: float = Field(gt=0)
    m_k: float = Field(gt=0)
    potential: PotentialModel
    initial: InitialModel
    grid: GridModel
    c2: float | None = Field(None, gt=0)
    hbar: float = Field(1.0, gt=0)


def _preset_or_custom(v) -> str:
    return "preset" if isinstance(v, str) else "custom"


def _list_or_parts(v) -> str:
    return "parts" if isinstance(v, (dict, BaseModel)) else "list"


ScenarioField = Annotated[
    Union[Annotated[Literal["reference-scattering", "two-branch"], Tag("preset")],
          Annotated[ScenarioModel, Tag("custom")]],
    Discriminator(_preset_or_custom),
]
# union tags never appear in user-facing field paths
_TAGS = {"preset", "custom", "list", "parts"}


class InteractionConfig(_Versioned):
    scenario: ScenarioField = "reference-scattering"
    n: int = Field(8, ge=1)
    dt: float | None = Field(None, gt=0)
    t_end: float = Field(16.0, gt=0)
    record_every: int | None = Field(None, ge=1)
    threshold: float | None = Field(None, gt=0.5, lt=1.0)


Quantity = Union[float, str]


class LorentzConfig(_Versioned):
    pair: Literal["electron-electron", "custom"] = "electron-electron"
    m_j: Quantity | None = None
    m_k: Quantity | None = None
    V: Quantity = "27.2eV"
    separation: Quantity = "1e-10m"
    v_max: float = Field(1e6, gt=0)
    velocity: float = Field(0.3, gt=-1, lt=1)
    boosts: list[float] = Field(default_factory=lambda: [0.1, 0.5, 0.9, 0.99])
    gamma_series: str | None = None
    n_paths: int = Field(1000, ge=2)
    ito_paths: int = Field(100, ge=2)
    ito_steps: int = Field(10_000, ge=1)


class MatrixModel(_Model):
    re: list[list[float]]
    im: list[list[float]] | None = None


MatrixField = Annotated[
    Union[Annotated[list[list[float]], Tag("list")], Annotated[MatrixModel, Tag("parts")]],
    Discriminator(_list_or_parts),
]


class TermModel(_Model):
    operator: MatrixField
    strength: float = 1.0
    rate: float = Field(1.0, ge=0)


class VectorModel(_Model):
    re: list[float]
    im: list[float] | None = None


VectorField = Annotated[
    Union[Annotated[list[float], Tag("list")], Annotated[VectorModel, Tag("parts")]],
    Discriminator(_list_or_parts),
]


class EnsembleConfig(_Versioned):
    initial: VectorField = Field(default_factory=lambda: [math.sqrt(0.5), math.sqrt(0.5)])
    hamiltonian: MatrixField | None = None
    terms: list[TermModel] = Field(default_factory=lambda: [TermModel(operator=[[1.0, 0.0], [0.0, -1.0]])])
    n: int = Field(1000, ge=1)
    dt: float | None = Field(None, gt=0)
    n_steps: int = Field(20_000, ge=1)
    record_every: int | None = Field(None, ge=1)
    threshold: float | None = Field(COMPLETION_THRESHOLD, gt=0.5, lt=1.0)
    complex_noise: bool = False


class NoiseAuditConfig(_Versioned):
    dt: float = Field(1e-3, gt=0)
    n_paths: int = Field(100, ge=2)
    n_steps: int = Field(100_000, ge=1)
    n_pairs: int = Field(20, ge=2)
    complex_noise: bool = False


CONFIGS = {
    "born-test": BornConfig,
    "simulate-interaction": InteractionConfig,
    "lorentz-check": LorentzConfig,
    "ensemble": EnsembleConfig,
    "noise-audit": NoiseAuditConfig,
}


# --- unit-suffixed quantities (lorentz-check only) ----------------------------------

_UNITS = {"eV": constants.EV, "J": 1.0, "s": 1.0, "m": 1.0, "kg": 1.0}
_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z]*)\s*$")


def parse_quantity(value: float | str, allowed: tuple[str, ...], field: str) -> float:
    """Number with an optional unit suffix, converted to SI."""
    if isinstance(value, (int, float)):
        return float(value)
    m = _QTY.match(value)
    if not m:
        raise ConfigError(f"cannot parse quantity {value!r}", field)
    num, unit = float(m.group(1)), m.group(2)
    if not unit:
        return num
    if unit not in allowed:
        raise ConfigError(f"unit {unit!r} not allowed here (expected one of {', '.join(allowed)})", field)
    return num * _UNITS[unit]


# --- result files ---------------------------------------------------------------

def metadata(command: str, seed: int | None, config: BaseModel, **extra) -> dict:
    meta = {"tool": "collapsesim", "version": __version__, "command": command, "seed": seed,
            "config": config.model_dump(mode="json")}
    meta.update(extra)
    return meta


def write_json(path: Path, meta: dict, payload: dict) -> None:
    path.write_text(json.dumps({"metadata": meta, **payload}, indent=1, sort_keys=True, allow_nan=True) + "\n")


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path: Path, meta: dict, columns: dict[str, np.ndarray]) -> None:
    """CSV with one ``#`` metadata line; floats use ``repr`` so they round-trip."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    w.writerow(names)
    n = len(next(iter(columns.values()))) if columns else 0
    for i in range(n):
        w.writerow([repr(float(columns[c][i])) for c in names])
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    lines = Path(path).read_text().splitlines()
    meta = json.loads(lines[0][2:])
    rows = list(csv.reader(lines[1:]))
    names = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]]) if len(rows) > 1 else np.empty((0, len(names)))
    return meta, {n: data[:, i] for i, n in enumerate(names)}


def stats_from_file(path: Path, key: str = "stats") -> EnsembleStats:
    return EnsembleStats.from_dict(read_json(path)[key])


# --- commands -------------------------------------------------------------------

class _Outcome:
    def __init__(self):
        self.checks: dict[str, bool] = {}

    def check(self, name: str, ok: bool) -> None:
        self.checks[name] = bool(ok)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _beta2_tag(x: float) -> str:
    return repr(float(x)).replace(".", "p")


def cmd_born(cfg: BornConfig, seed: int, workers, out: Path, res: _Outcome) -> dict:
    runs, verdicts = [], []
    for b2 in cfg.beta2:
        spec = tl.TwoLevelSpec.from_beta2(b2, a=cfg.a, b=cfg.b, k=cfg.k, gamma=cfg.gamma)
        counts = tl.born_experiment(spec, cfg.n, cfg.dt, seed, hamiltonian_scale=cfg.hamiltonian_scale,
                                    threshold=cfg.threshold, workers=workers)
        v = tl.born_verdict(counts, spec, alpha=cfg.alpha, z_max=cfg.z_max)
        verdicts.append(v)
        res.check(f"born beta2={b2!r}", v.passed and not counts.flagged)
        st = counts.stats
        meta = metadata("born-test", seed, cfg, beta2=b2, dt=counts.dt, n_steps=counts.n_steps,
                        threshold=cfg.threshold)
        write_csv(out / f"born_{_beta2_tag(b2)}.csv", meta,
                  {"t": st.times, "norm": st.mean("norm"), "beta2": st.mean("w_y")})
        runs.append({"beta2": b2, "count_x": counts.count_x, "count_y": counts.count_y,
                     "unresolved": counts.unresolved, "flagged": counts.flagged, "dt": counts.dt,
                     "n_steps": counts.n_steps, "verdict": v.to_dict(), "stats": st.to_dict()})
        print(f"beta2={b2}: x={counts.count_x} y={counts.count_y} unresolved={counts.unresolved} "
              f"p={v.p_value:.4g} {'PASS' if v.passed else 'FAIL'}")
    chi, dof, p, ok = joint_chi_square(verdicts, alpha=cfg.alpha)
    res.check("joint chi-square", ok)
    print(f"joint chi-square {chi:.4g} on {dof} dof, p={p:.4g} {'PASS' if ok else 'FAIL'}")
    payload = {"runs": runs, "joint": {"chi_square": chi, "dof": dof, "p_value": p, "pass": ok}}
    write_json(out / "born_test.json", metadata("born-test", seed, cfg, threshold=cfg.threshold), payload)
    return payload


def scenario_from_model(m: ScenarioModel) -> ia.InteractionScenario:
    pot = {"softened-coulomb": lambda p: ia.SoftenedCoulomb(p.charge_product, p.softening),
           "gaussian-well": lambda p: ia.GaussianWell(p.depth, p.width),
           "none": lambda p: ia.NoPotential()}[m.potential.kind](m.potential)

    def packet(p: PacketModel | None, where: str) -> ia.WavePacket:
        if p is None:
            raise ConfigError("packet required", where)
        return ia.WavePacket(p.center, p.width, p.momentum)

    ini = m.initial
    if ini.kind == "packet-pair":
        initial = ia.PacketPair(packet(ini.j, "scenario.initial.j"), packet(ini.k, "scenario.initial.k"))
    elif ini.kind == "branches":
        if not ini.branches or not ini.weights:
            raise ConfigError("branches and weights required", "scenario.initial.branches")
        pairs = tuple(ia.PacketPair(packet(b.j, ""), packet(b.k, "")) for b in ini.branches)
        initial = ia.BranchSuperposition(pairs, tuple(ini.weights), ini.classify_by,
                                         tuple(ini.labels) if ini.labels else None)
    else:
        initial = ia.MomentumEigenstate(ini.total_index, packet(ini.relative, "scenario.initial.relative"))
    grid = ia.GridSpec(m.grid.n_points, m.grid.spacing, m.grid.boundary)
    return ia.InteractionScenario(m.m_j, m.m_k, pot, initial, grid, m.c2, m.hbar)


def cmd_interaction(cfg: InteractionConfig, seed: int, workers, out: Path, res: _Outcome) -> dict:
    if cfg.scenario == "reference-scattering":
        s = ia.reference_scattering()
    elif cfg.scenario == "two-branch":
        s = ia.two_branch_detector()
    else:
        try:
            s = scenario_from_model(cfg.scenario)
        except ValueError as e:
            raise ConfigError(str(e), getattr(e, "field", None) or "scenario") from e
    dt = cfg.dt or ia.default_dt(s)
    n_steps = max(1, int(round(cfg.t_end / dt)))
    sched = Schedule(dt, n_steps, cfg.record_every or max(1, n_steps // 200))
    threshold = cfg.threshold
    if threshold is None and ia.branch_masks(s) is not None:
        threshold = COMPLETION_THRESHOLD
    m = ia.simulate_measurement(s, cfg.n, seed, sched, threshold=threshold, workers=workers)
    ledger = m.ledger()
    meta = metadata("simulate-interaction", seed, cfg, dt=dt, n_steps=n_steps, threshold=threshold,
                    c2=m.c2, onset_threshold=m.onset_threshold)
    cols = {"t": ledger["t"], "norm": ledger["norm"], "V": ledger["V"], "gamma": ledger["gamma"],
            "gamma_integral": ledger["gamma_integral"], "p_total": ledger["P"], "h_total": ledger["H"]}
    write_csv(out / "interaction_ledger.csv", meta, cols)
    norm_dev = float(np.max(np.abs(ledger["norm"] - 1.0)))
    res.check("no failed trajectories", m.stats.failed == 0)
    res.check("norm preserved", norm_dev <= 1e-9)
    payload = {"outcomes": m.outcome_table, "norm_deviation": norm_dev, "stats": m.stats.to_dict()}
    write_json(out / "interaction.json", meta, payload)
    print(f"{cfg.n} trajectories, dt={dt:.4g}, {n_steps} steps; outcomes {m.outcome_table['counts']}, "
          f"unresolved {m.outcome_table['unresolved']}; final gamma integral "
          f"{ledger['gamma_integral'][-1]:.4g}")
    return payload


def _reference_gamma_series() -> np.ndarray:
    """Smooth single-bump rate series used when no series file is given."""
    t = np.linspace(0.0, 10.0, 2001)
    return np.column_stack([t, np.exp(-0.5 * (t - 5.0) ** 2)])


def cmd_lorentz(cfg: LorentzConfig, seed: int, workers, out: Path, res: _Outcome) -> dict:
    V_j = parse_quantity(cfg.V, ("eV", "J"), "V")
    sep = parse_quantity(cfg.separation, ("m",), "separation")
    if cfg.pair == "electron-electron":
        if cfg.m_j is not None or cfg.m_k is not None:
            raise ConfigError("masses are fixed for pair 'electron-electron'", "m_j")
        m_j = m_k = constants.M_E
    else:
        if cfg.m_j is None or cfg.m_k is None:
            raise ConfigError("custom pair needs m_j and m_k", "m_j" if cfg.m_j is None else "m_k")
        m_j = parse_quantity(cfg.m_j, ("kg",), "m_j")
        m_k = parse_quantity(cfg.m_k, ("kg",), "m_k")
    try:
        boosts = [lz.Boost(u) for u in cfg.boosts]
    except ValueError as e:
        raise ConfigError(str(e), "boosts") from e
    # relativistic kinematics in eV with c = 1
    to_ev = constants.C ** 2 / constants.EV
    pair = lz.RelativisticPair.center_of_mass(m_j * to_ev, m_k * to_ev, cfg.velocity, V_j / constants.EV)
    ratio_dev = lz.ratio_invariance(pair, boosts)
    if cfg.gamma_series:
        _, cols = read_csv(Path(cfg.gamma_series))
        series = np.column_stack([cols["t"], cols["gamma"]])
    else:
        series = _reference_gamma_series()
    integ = [lz.rate_integral_invariance(series, b) for b in boosts]
    ms = lz.noise_mean_square_invariance(series, lz.Boost(0.6), cfg.n_paths, seed)
    ito = nz.ito_variance_statistic(nz.NoiseConfig(seed, 1e-3), cfg.ito_paths, cfg.ito_steps)
    est = lz.scale_estimates(sep, V_j, m_j, m_k, cfg.v_max)

    rows = [
        ("ratio_invariance", ratio_dev, 0.0, 1e-12, ratio_dev <= 1e-12),
        ("rate_integral_deviation", max(d for *_, d in integ), 0.0, 1e-12, max(d for *_, d in integ) <= 1e-12),
        ("mean_square_z", ms.z, 0.0, 5.0, abs(ms.z) <= 5.0),
        ("ito_variance_z", ito["z"], 0.0, 5.0, abs(ito["z"]) <= 5.0),
    ]
    for key, val in est.items():
        ref = lz.REFERENCE_ESTIMATES[key]
        if key == "dt_int":
            tol = 0.1
            ok = abs(val / ref - 1.0) <= tol
        else:
            tol = 1.0  # orders of magnitude
            ok = lz.order_of_magnitude_agrees(val, ref)
        rows.append((key, val, ref, tol, ok))
    for name, val, _, _, ok in rows:
        res.check(name, ok)
    meta = metadata("lorentz-check", seed, cfg, thresholds={"ratio": 1e-12, "integral": 1e-12, "z": 5.0,
                                                          "dt_int_relative": 0.1, "orders_of_magnitude": 1.0})
    table = {n: [r[i] for r in rows] for i, n in enumerate(("quantity", "value", "reference", "tolerance", "pass"))}
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value", "reference", "tolerance", "pass"])
    for r in rows:
        w.writerow([r[0], repr(float(r[1])), repr(float(r[2])), repr(float(r[3])), "1" if r[4] else "0"])
    (out / "lorentz.csv").write_text(buf.getvalue())
    payload = {"table": table, "estimates": est, "reference_estimates": lz.REFERENCE_ESTIMATES,
               "mean_square": ms.__dict__, "ito": {k: v for k, v in ito.items() if k != "ratios"}}
    write_json(out / "lorentz.json", meta, payload)
    for name, val, ref, _, ok in rows:
        extra = f" (reference {ref:.3g})" if ref else ""
        print(f"{name:24s} {val: .6g}{extra} {'PASS' if ok else 'FAIL'}")
    return payload


def _matrix(m) -> np.ndarray:
    if isinstance(m, MatrixModel):
        a = np.asarray(m.re, dtype=np.complex128)
        if m.im is not None:
            a = a + 1j * np.asarray(m.im)
        return a
    return np.asarray(m, dtype=np.complex128)


def _vector(v) -> np.ndarray:
    if isinstance(v, VectorModel):
        a = np.asarray(v.re, dtype=np.complex128)
        if v.im is not None:
            a = a + 1j * np.asarray(v.im)
        return a
    return np.asarray(v, dtype=np.complex128)


def cmd_ensemble(cfg: EnsembleConfig, seed: int, workers, out: Path, res: _Outcome) -> dict:
    try:
        psi = StateVector.normalized(_vector(cfg.initial))
        H = HermitianOperator(_matrix(cfg.hamiltonian)) if cfg.hamiltonian is not None else None
        terms = tuple(CollapseTerm(HermitianOperator(_matrix(t.operator)), t.strength, t.rate) for t in cfg.terms)
    except ValueError as e:
        raise ConfigError(str(e), "terms") from e
    dt = cfg.dt or default_dt(H, terms)
    sched = Schedule(dt, cfg.n_steps, cfg.record_every or max(1, cfg.n_steps // 100))
    sc = EnsembleScenario(psi, H, terms, threshold=cfg.threshold if terms else None,
                          complex_noise=cfg.complex_noise)
    st = run_ensemble(sc, cfg.n, seed, sched, workers=workers)
    meta = metadata("ensemble", seed, cfg, dt=dt, n_steps=cfg.n_steps, threshold=sc.threshold)
    cols = {"t": st.times, "norm": st.mean("norm")}
    for name in sorted(st.sums):
        if name not in cols:
            cols[name] = st.mean(name)
    write_csv(out / "ensemble.csv", meta, cols)
    res.check("no failed trajectories", st.failed == 0)
    payload = {"outcomes": st.outcome_counts, "unresolved": st.unresolved, "stats": st.to_dict()}
    write_json(out / "ensemble.json", meta, payload)
    print(f"{cfg.n} trajectories, outcomes {st.outcome_counts}, unresolved {st.unresolved}")
    return payload


def cmd_noise(cfg: NoiseAuditConfig, seed: int, workers, out: Path, res: _Outcome) -> dict:
    ncfg = nz.NoiseConfig(seed, cfg.dt, complex_noise=cfg.complex_noise)
    ito = nz.ito_variance_statistic(ncfg, cfg.n_paths, cfg.n_steps)
    cc = nz.cross_correlation(seed, cfg.dt, min(cfg.n_steps, 10_000), cfg.n_pairs)
    r1 = nz.dt_dxi_ratio(seed, cfg.dt, 1.0)
    r2 = nz.dt_dxi_ratio(seed, cfg.dt / 4, 1.0)
    res.check("ito variance", abs(ito["z"]) <= 5.0)
    res.check("independent streams", abs(cc["z"]) <= 5.0)
    res.check("dt dxi vanishes", r2 < r1)
    meta = metadata("noise-audit", seed, cfg, dt=cfg.dt)
    payload = {"ito": {k: v for k, v in ito.items() if k != "ratios"}, "ratios": ito["ratios"].tolist(),
               "cross_correlation": cc, "dt_dxi_ratio": {"dt": r1, "dt/4": r2}}
    write_json(out / "noise_audit.json", meta, payload)
    print(f"ito mean {ito['mean']:.6f} +- {ito['stderr']:.2g} (z={ito['z']:.2f}); "
          f"cross-correlation z={cc['z']:.2f}; dt*dxi ratio {r1:.3g} -> {r2:.3g}")
    return payload


COMMANDS = {
    "born-test": cmd_born,
    "simulate-interaction": cmd_interaction,
    "lorentz-check": cmd_lorentz,
    "ensemble": cmd_ensemble,
    "noise-audit": cmd_noise,
}


# --- argument handling -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="collapsesim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON config file")
        sp.add_argument("--seed", type=int, help="base seed (overrides COLLAPSE_SEED)")
        sp.add_argument("--workers", type=int, help="worker processes (default: all cores)")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        return sp

    b = common(sub.add_parser("born-test", help="two-level Born-rule ensembles"))
    b.add_argument("--beta2", type=_floats)
    b.add_argument("--n", type=int)
    b.add_argument("--dt", type=float)
    b.add_argument("--gamma", type=float)
    b.add_argument("--threshold", type=float)

    i = common(sub.add_parser("simulate-interaction", help="interaction-induced collapse ensemble"))
    i.add_argument("--scenario", choices=["reference-scattering", "two-branch"])
    i.add_argument("--n", type=int)
    i.add_argument("--dt", type=float)
    i.add_argument("--t-end", dest="t_end", type=float)
    i.add_argument("--threshold", type=float)

    lo = common(sub.add_parser("lorentz-check", help="invariance table and scale estimates"))
    lo.add_argument("--pair", choices=["electron-electron", "custom"])
    lo.add_argument("--V", dest="V", help="interaction energy, e.g. 27.2eV")
    lo.add_argument("--separation", help="e.g. 1e-10m")
    lo.add_argument("--v-max", dest="v_max", type=float, help="speed in m/s")
    lo.add_argument("--boosts", type=_floats)

    e = common(sub.add_parser("ensemble", help="generic ensemble runner"))
    e.add_argument("--n", type=int)
    e.add_argument("--dt", type=float)
    e.add_argument("--n-steps", dest="n_steps", type=int)

    na = common(sub.add_parser("noise-audit", help="Itô increment checks"))
    na.add_argument("--dt", type=float)
    na.add_argument("--n-paths", dest="n_paths", type=int)
    na.add_argument("--n-steps", dest="n_steps", type=int)
    return p


_RESERVED = {"command", "config", "seed", "workers", "out"}


def load_config(command: str, path: Path | None, overrides: dict[str, Any]) -> BaseModel:
    """Validate file contents plus flag overrides against the command schema."""
    data: dict[str, Any] = {"version": CONFIG_VERSION}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}", "config")
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}", "config")
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object", "config")
        if "version" not in raw:
            raise ConfigError("config has no version field", "version")
        data = raw
    data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return CONFIGS[command].model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(x) for x in err["loc"] if x not in _TAGS)
        raise ConfigError(err["msg"], loc) from None


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        overrides = {k: v for k, v in vars(args).items() if k not in _RESERVED}
        cfg = load_config(args.command, args.config, overrides)
        try:
            seed = nz.resolve_seed(args.seed)
        except ValueError as e:
            raise ConfigError(str(e), "seed")
        if args.workers is not None and args.workers < 1:
            raise ConfigError("workers must be >= 1", "workers")
        args.out.mkdir(parents=True, exist_ok=True)
        res = _Outcome()
        COMMANDS[args.command](cfg, seed, args.workers, args.out, res)
    except ConfigError as e:
        sys.stderr.write(json.dumps({"error": "config", "field": e.field, "message": str(e)}) + "\n")
        return 2
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    failed = [k for k, ok in res.checks.items() if not ok]
    if failed:
        sys.stderr.write(json.dumps({"error": "assertion", "failed": failed}) + "\n")
        return 1
    return 0


def main() -> None:
    sys.exit(run())
