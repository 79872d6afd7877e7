"""Joint user pairing and resource allocation for semantic feature multiple access."""

from .config import RunConfig, load_config
from .feasibility import InfeasibleDraw, static_prune
from .link import AllocationState, SystemModel, check_feasible
from .orchestrator import (
    AOOptions, SCHEMES, run_alternating, solve_channel_pairing, solve_equal_allocation, solve_fdma,
    solve_profile_family, solve_proposed, solve_scheme,
)
from .profiles import ProfileGenParams, synth_profiles
from .scenario import generate_scenario, make_budgets

__version__ = "0.1.0"

__all__ = [
    "AOOptions", "AllocationState", "InfeasibleDraw", "ProfileGenParams", "RunConfig", "SCHEMES", "SystemModel",
    "check_feasible", "generate_scenario", "load_config", "make_budgets", "run_alternating", "solve_channel_pairing",
    "solve_equal_allocation", "solve_fdma", "solve_profile_family", "solve_proposed", "solve_scheme",
    "static_prune", "synth_profiles",
]
