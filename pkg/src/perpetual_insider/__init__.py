"""Perpetual American options for a holder who learns when the asset's global extremum occurs.

Modules
-------
model
    Parameters, contracts, payoffs, drifts and characteristic exponents.
special
    Gauss hypergeometric function and post-extremum fundamental solutions.
boundaries
    Optimal exercise boundaries in both regimes and for the uninformed holder.
valuation
    Closed-form value functions and free-boundary diagnostics.
montecarlo
    Independent simulation oracle.
cli
    Command-line front end.
"""

from .boundaries import (BoundaryCurve, GridSpec, appendix_boundaries, boundary_j1,
                         boundary_standard_j0, default_grid, insider_boundary, ray_ratio,
                         root_power_equation, solve_extremal_boundary, solve_j1)
from .errors import (ConfigError, ConvergenceError, CoverageError, DegenerateError, DomainError,
                     MissingBoundaryError, NoRootError, ParameterError, PerpetualInsiderError,
                     RootError, SingularityError, StepError, StepSizeError)
from .model import (REFERENCE_CALL, REFERENCE_PUT, Family, ModelParams, OptionSpec, Side,
                    StatePoint, asset_drift, azema_supermartingale, build_params,
                    drift_adjustment, exponents, h_function, payoff)
from .montecarlo import (MCEstimate, SimConfig, estimate_value, evaluate_insider_rule,
                         simulate_conditioned_j1, simulate_reference)
from .special import fundamental_params, fundamental_solution, hyp2f1
from .valuation import (BoundarySet, Region, ValueResult, build_boundaries, classify_region,
                        insider_value, value, value_appendix)

__version__ = "0.1.0"

__all__ = [
    "BoundaryCurve", "BoundarySet", "ConfigError", "ConvergenceError", "CoverageError",
    "DegenerateError", "DomainError", "Family", "GridSpec", "MCEstimate", "MissingBoundaryError",
    "ModelParams", "NoRootError", "OptionSpec", "ParameterError", "PerpetualInsiderError",
    "REFERENCE_CALL", "REFERENCE_PUT", "Region", "RootError", "Side", "SimConfig",
    "SingularityError", "StatePoint", "StepError", "StepSizeError", "ValueResult",
    "appendix_boundaries", "asset_drift", "azema_supermartingale", "boundary_j1",
    "boundary_standard_j0", "build_boundaries", "build_params", "classify_region",
    "default_grid", "drift_adjustment", "estimate_value", "evaluate_insider_rule", "exponents",
    "fundamental_params", "fundamental_solution", "h_function", "hyp2f1", "insider_boundary",
    "insider_value", "payoff", "ray_ratio", "root_power_equation", "simulate_conditioned_j1",
    "simulate_reference", "solve_extremal_boundary", "solve_j1", "value", "value_appendix",
]
