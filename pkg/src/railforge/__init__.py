"""Joint railcar routing and train formation planning on capacitated rail networks."""

from .anneal import SaConfig, SaRun, anneal, initial_solution, multistart, potential_services
from .energy import EnergyBreakdown, PenaltyConfig, default_penalties, energy, plan_cost
from .generate import generate_document, generate_instance
from .instance import Instance, load_instance, parse_instance, validate_instance
from .oracle import OracleLimits, OracleResult, enumerate_optimum, optimal_assignment
from .paths import PathCatalog, build_catalog
from .routing import FlowState, ServiceDesign, propagate_flows, route_all

__all__ = [
    "EnergyBreakdown", "FlowState", "Instance", "OracleLimits", "OracleResult", "PathCatalog",
    "PenaltyConfig", "SaConfig", "SaRun", "ServiceDesign", "anneal", "build_catalog", "default_penalties",
    "energy", "enumerate_optimum", "generate_document", "generate_instance", "initial_solution",
    "load_instance", "multistart", "optimal_assignment", "parse_instance", "plan_cost",
    "potential_services", "propagate_flows", "route_all", "validate_instance",
]
