"""Finite-support populations and the linear programs over them."""

from .lp import LPProblem, LPResult, lp_solve, revised_simplex
from .population import PopulationDistribution, enumerate_population
from .sharp import (
	ConditionalRestriction, UnconditionalRestriction, build_sharp_lp, history_instruments, population_outer_bounds,
	sharp_bounds,
)

__all__ = [
	"LPProblem", "LPResult", "lp_solve", "revised_simplex", "PopulationDistribution", "enumerate_population",
	"ConditionalRestriction", "UnconditionalRestriction", "build_sharp_lp", "history_instruments",
	"population_outer_bounds", "sharp_bounds",
]
