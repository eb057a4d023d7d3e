from .dynamics import (
    Equilibrium,
    IntegrationError,
    NoEquilibriumError,
    Plant,
    dispatch_equilibrium,
    find_equilibrium,
    plant_from_model,
    rk4_step,
    sample_step,
    state_jacobian,
    swing_rhs,
    vsg_power,
)
from .network import (
    ConfigError,
    GridModel,
    ReducedNetwork,
    ReductionError,
    build_admittance,
    electrical_power,
    kron_reduce,
    load_grid,
    reduce_to_sources,
    solve_operating_point,
)
from .scenario import FaultScenario, Trajectory, load_scenario, scenario_network, simulate

__all__ = [
    "ConfigError",
    "Equilibrium",
    "FaultScenario",
    "GridModel",
    "IntegrationError",
    "NoEquilibriumError",
    "Plant",
    "ReducedNetwork",
    "ReductionError",
    "Trajectory",
    "build_admittance",
    "dispatch_equilibrium",
    "electrical_power",
    "find_equilibrium",
    "kron_reduce",
    "load_grid",
    "load_scenario",
    "plant_from_model",
    "reduce_to_sources",
    "rk4_step",
    "sample_step",
    "scenario_network",
    "simulate",
    "solve_operating_point",
    "state_jacobian",
    "swing_rhs",
    "vsg_power",
]
