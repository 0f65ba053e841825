"""Inexact hypergradients for bilevel optimization with certified error bounds."""

from .core import (BilevelTask, ContractViolation, CurvatureConstants,
                   DivergenceError, LowerProblem, NumericError, SolveReport,
                   SpdViolationError, UpperObjective, check_curvature,
                   check_hvp_symmetry, finite_diff_check_grad)
from .driver import BilevelConfig, TraceRow, evaluate_upper, run_bilevel
from .hypergradient import (HypergradConfig, HypergradResult, aposteriori_bound,
                            apriori_bound, compute_hypergradient,
                            iad_gd_reference, iad_hb_reference,
                            operator_norm_estimate)
from .linear import (LinearSolveReport, SpdSystem, apriori_residual_bound,
                     solve_spd)
from .lower import (BoundValue, LowerSolverParams, Method, StoppingRule,
                    apriori_lower_bound, optimal_params, rate_constant,
                    solve_lower)

__version__ = "0.1.0"
