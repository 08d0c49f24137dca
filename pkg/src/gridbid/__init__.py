"""Bid-based electricity market coupled to swing-equation frequency dynamics."""

from .casefile import Case, load_case, load_scenario, bundled
from .certificates import (
    EpsilonParameters,
    LipschitzConstants,
    LyapunovCertificate,
    RegionOmega,
    find_epsilon,
    lipschitz_constants,
    step_bounds,
    w_epsilon,
)
from .dynamics import GainSet, SystemState, find_equilibrium, integrate_continuous, vector_field
from .hybrid import (
    Periodic,
    Randomized,
    ScenarioEvent,
    Trajectory,
    TriggerSchedule,
    generate_schedule,
    lyapunov_monitor,
    mismatch_bound_check,
    simulate,
)
from .market import CostModel, solve_economic_dispatch
from .network import PowerNetwork, TreeCoordinates, build_network, select_spanning_tree

__all__ = [
    "Case", "load_case", "load_scenario", "bundled",
    "EpsilonParameters", "LipschitzConstants", "LyapunovCertificate", "RegionOmega",
    "find_epsilon", "lipschitz_constants", "step_bounds", "w_epsilon",
    "GainSet", "SystemState", "find_equilibrium", "integrate_continuous", "vector_field",
    "Periodic", "Randomized", "ScenarioEvent", "Trajectory", "TriggerSchedule",
    "generate_schedule", "lyapunov_monitor", "mismatch_bound_check", "simulate",
    "CostModel", "solve_economic_dispatch",
    "PowerNetwork", "TreeCoordinates", "build_network", "select_spanning_tree",
]
