"""Norm-preserving stochastic collapse dynamics: Euler-Maruyama trajectories,
ensemble statistics, interaction-driven collapse on a grid and relativistic
checks of the collapse term."""

__version__ = "0.1.0"

from .state import (
    BipartitePartition,
    DimensionError,
    HermitianOperator,
    HermiticityError,
    StateVector,
    deviation_apply,
    expectation,
    reduced_density,
    trace_distance,
)
from .noise import NoiseConfig, NoisePath, NoiseStream, resolve_seed, sample_path
from .integrator import (
    COMPLETION_THRESHOLD,
    CollapseTerm,
    IntegrationError,
    Schedule,
    TrajectoryRecord,
    em_step,
    integrate_batch,
    integrate_trajectory,
)
from .ensemble import EnsembleScenario, EnsembleStats, born_test, no_signaling_test, run_ensemble
from .twolevel import TwoLevelSpec, born_experiment, gambler_ruin_oracle, tangent_term, walk_coordinate

__all__ = [
    "BipartitePartition", "DimensionError", "HermitianOperator", "HermiticityError", "StateVector",
    "deviation_apply", "expectation", "reduced_density", "trace_distance",
    "NoiseConfig", "NoisePath", "NoiseStream", "resolve_seed", "sample_path",
    "COMPLETION_THRESHOLD", "CollapseTerm", "IntegrationError", "Schedule", "TrajectoryRecord",
    "em_step", "integrate_batch", "integrate_trajectory",
    "EnsembleScenario", "EnsembleStats", "born_test", "no_signaling_test", "run_ensemble",
    "TwoLevelSpec", "born_experiment", "gambler_ruin_oracle", "tangent_term", "walk_coordinate",
]
