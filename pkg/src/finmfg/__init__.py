"""Finite mean field games: dynamic programming, fictitious play,
Wasserstein diagnostics and discretization of continuous models."""

__version__ = "0.1.0"

from .bellman import best_response_value, solve_backward
from .core import (
    CostModel,
    EntropySeparableCost,
    FiniteMeasure,
    FiniteMFGInstance,
    StateSet,
    TimeGrid,
    coupling_cost,
    identity_kernel,
    kinetic_cost,
    product_kernel,
    propagate_marginals,
    total_cost,
    uniform_kernel,
)
from .discretizer import (
    ContinuousMFGSpec,
    DiscretizationLevel,
    FPConfig,
    Schedule,
    build_instance,
    energy_estimate,
    interpolate_flow,
    sample_paths,
    solve_level,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    DomainError,
    InfeasibleError,
    LipschitzError,
    MFGError,
    NumericDomainError,
    SimplexError,
    StateError,
    UnsupportedModelError,
)
from .fictitious_play import check_monotonicity, exploitability, fp_step, init_state, run_fp
from .hjb import Hamiltonian, OracleConfig, equilibrium_residual, reference_value
from .simplex import general_minimizer, softmax_minimizer
from .wasserstein import GroundMetric, d1, d1_line, d1_lp, dual_lower_bound, flow_distance

__all__ = [name for name in dir() if not name.startswith("_")]
