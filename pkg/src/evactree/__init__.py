"""Evacuation-tree planning for mixed vehicle fleets with refueling needs."""

from .evalcheck import oracle_solve, true_objective, validate_solution
from .netgraph import Network, add_super_shelter, bpr_time, hopify, parse_tntp
from .scenario import Scenario, VehicleClass, load_scenario, origins, tau_from_range
from .search import SolverConfig, solve
from .solution import Solution, solution_from_dict

__version__ = "0.1.0"

__all__ = [
    "Network",
    "Scenario",
    "Solution",
    "SolverConfig",
    "VehicleClass",
    "add_super_shelter",
    "bpr_time",
    "hopify",
    "load_scenario",
    "oracle_solve",
    "origins",
    "parse_tntp",
    "solution_from_dict",
    "solve",
    "tau_from_range",
    "true_objective",
    "validate_solution",
]
