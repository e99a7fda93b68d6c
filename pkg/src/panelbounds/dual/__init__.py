"""Dual representation of moment-restricted bounds."""

from .engine import (
	BoundsSide, DualProblemSpec, EnvelopeEvaluation, IndicatorSplit, MomentSet, OuterConfig, QuadraticForm,
	SupportRegion, envelope, inner_values, min_relaxation, outer_optimize, penalized_outer_optimize,
)
from .problems import (
	cdf_bounds, cdf_bounds_grid, cdf_problem, dual_mean_bounds, estimate_lambda_min, mean_problem, moment_set,
	selector, variance_bounds, variance_lower, variance_problem, variance_upper,
)
from .qp import solve_box_qp, solve_one

__all__ = [
	"BoundsSide", "DualProblemSpec", "EnvelopeEvaluation", "IndicatorSplit", "MomentSet", "OuterConfig",
	"QuadraticForm", "SupportRegion", "envelope", "inner_values", "min_relaxation", "outer_optimize",
	"penalized_outer_optimize", "cdf_bounds", "cdf_bounds_grid", "cdf_problem", "dual_mean_bounds",
	"estimate_lambda_min", "mean_problem", "moment_set", "selector", "variance_bounds", "variance_lower",
	"variance_problem", "variance_upper", "solve_box_qp", "solve_one",
]
