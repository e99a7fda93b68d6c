"""Linear programs over the joint law of observables and coefficients.

For a population with finite support the identified set of ``E m(W, B)``
is the range of ``sum_{w,b} m(w, b) P(w, b)`` over nonnegative couplings
``P`` whose ``w``-marginal matches the observed law and which satisfy the
model restrictions.  Two restriction sets are supported:

* conditional: ``E(eps_t | B, X^t) = 0`` for every ``t`` (sharp set);
* unconditional: ``E sum_t (R_t'B) eps_t = 0`` and ``E S_t eps_t = 0``
  (outer set, the moments behind the closed-form refined bounds).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from ..dual.engine import FREE, SupportRegion, outer_optimize
from ..dual.problems import mean_problem
from ..errors import ConfigError, InfeasibleError, InfeasibleSharpSet
from ..mean_bounds import BoundsResult, refined_bounds
from ..panel import InstrumentSpec, Window, build_instruments
from .lp import LPProblem, lp_solve
from .population import PopulationDistribution


@dataclass(frozen=True)
class ConditionalRestriction:
	"""Shocks mean independent of the coefficients and the regressor history."""


@dataclass(frozen=True)
class UnconditionalRestriction:
	"""Orthogonality of the shocks to ``R_t'B`` (pooled) and to instruments ``S_t``."""

	instruments: InstrumentSpec = InstrumentSpec(True, (Window("x", None, 0),))
	include_first: bool = True


def history_instruments() -> InstrumentSpec:
	"""``S_t = (1, X_1, ..., X_t)``."""
	return InstrumentSpec(True, (Window("x", None, 0),))


def coefficient_support(pop: PopulationDistribution) -> np.ndarray:
	return np.unique(pop.b, axis=0)


def _residuals(pop, support):
	r = np.stack([np.ones_like(pop.wx), pop.wx], axis=2)  # (nW, T, 2)
	fit = np.einsum("wtd,jd->wjt", r, support)
	return pop.wy[:, None, :] - fit, r


def build_sharp_lp(pop: PopulationDistribution, m=None, restriction=None, sense: str = "min",
				   support: np.ndarray | None = None) -> LPProblem:
	"""Assemble the coupling LP.

	Parameters
	----------
	pop : PopulationDistribution
	m : array_like or callable, optional
		Objective.  A vector ``e`` means ``m(w, b) = e'b`` (default selects
		the slope).  A callable receives ``(wy, wx, support)`` and returns an
		``(nW, nB)`` array.
	restriction : ConditionalRestriction or UnconditionalRestriction
	sense : {"min", "max"}
	support : ndarray, optional
		Candidate coefficient values; defaults to the population's support.
	"""
	restriction = ConditionalRestriction() if restriction is None else restriction
	support = coefficient_support(pop) if support is None else np.asarray(support, dtype=float)
	nW, nB, T = pop.wy.shape[0], support.shape[0], pop.T
	eps, r = _residuals(pop, support)
	var = np.arange(nW)[:, None] * nB + np.arange(nB)[None, :]
	rows, cols, vals = [np.repeat(np.arange(nW), nB)], [var.ravel()], [np.ones(nW * nB)]
	rhs = [pop.pw]
	offset = nW
	if isinstance(restriction, ConditionalRestriction):
		for t in range(T):
			_, pid = np.unique(pop.wx[:, : t + 1], axis=0, return_inverse=True)
			pid = pid.ravel()
			P = pid.max() + 1
			rr = offset + np.arange(nB)[None, :] * P + pid[:, None]
			v = eps[:, :, t]
			nz = v != 0
			rows.append(rr[nz])
			cols.append(var[nz])
			vals.append(v[nz])
			rhs.append(np.zeros(nB * P))
			offset += nB * P
	elif isinstance(restriction, UnconditionalRestriction):
		blocks = build_instruments(pop.to_panel(), restriction.instruments, drop_redundant=True)
		mom = []
		if restriction.include_first:
			fitted = np.einsum("wtd,jd->wjt", r, support)
			mom.append(np.sum(fitted * eps, axis=2))
		for l in range(blocks.L):
			mom.append(blocks.values[:, l][:, None] * eps[:, :, blocks.period[l]])
		for k, v in enumerate(mom):
			nz = v != 0
			rows.append(np.full(nz.sum(), offset + k))
			cols.append(var[nz])
			vals.append(v[nz])
		rhs.append(np.zeros(len(mom)))
		offset += len(mom)
	else:
		raise ConfigError("unknown restriction type")
	A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
						  shape=(offset, nW * nB))
	if m is None:
		m = np.array([0.0, 1.0])
	if callable(m):
		cost = np.asarray(m(pop.wy, pop.wx, support), dtype=float).reshape(nW, nB)
	else:
		cost = np.broadcast_to(support @ np.asarray(m, dtype=float), (nW, nB))
	return LPProblem(np.ascontiguousarray(cost).ravel(), A, np.concatenate(rhs), sense)


def _bounds(pop, m, restriction, backend, method):
	out = {}
	for sense in ("min", "max"):
		lp = build_sharp_lp(pop, m, restriction, sense)
		try:
			out[sense] = lp_solve(lp, backend)
		except InfeasibleError as exc:
			raise InfeasibleSharpSet("restrictions incompatible with the population") from exc
	lo, hi = out["min"], out["max"]
	return BoundsResult(lo.value, hi.value, method=method,
						diagnostics={"lp_shape": list(lp.shape), "gap": max(lo.gap, hi.gap)})


def sharp_bounds(pop: PopulationDistribution, e=(0.0, 1.0), backend: str = "highs") -> BoundsResult:
	"""Sharp bounds on ``E(e'B)`` under conditional mean independence."""
	return _bounds(pop, np.asarray(e, dtype=float), ConditionalRestriction(), backend, "sharp-lp")


def population_outer_bounds(pop: PopulationDistribution, e=(0.0, 1.0), instruments: InstrumentSpec | None = None,
							method: str = "dual", backend: str = "highs") -> BoundsResult:
	"""Outer bounds from the refined unconditional moments, in population.

	Parameters
	----------
	method : {"dual", "lp", "closed-form"}
		``"dual"`` (default) and ``"lp"`` optimise over couplings supported
		on the population's coefficient support, through the multiplier
		problem with an exact finishing step or through the primal program
		(slow beyond ``T = 5``).  ``"closed-form"`` applies the closed-form
		refined bounds to the exact observable law, which requires every
		``R'R`` to be nonsingular.
	"""
	spec = history_instruments() if instruments is None else instruments
	e = np.asarray(e, dtype=float)
	if method == "lp":
		return _bounds(pop, e, UnconditionalRestriction(spec), backend, "outer-lp")
	data = pop.to_panel()
	blocks = build_instruments(data, spec, drop_redundant=True)
	if method == "closed-form":
		return refined_bounds(data, blocks, e)
	if method == "dual":
		region = SupportRegion.finite(coefficient_support(pop))
		sides = {}
		for side in ("lower", "upper"):
			prob = mean_problem(data, blocks, e, side, region)
			# equality moments on a finite support leave every multiplier free
			prob = replace(prob, domain=(FREE,) * prob.K)
			sides[side] = outer_optimize(prob)
		lo, hi = sides["lower"], sides["upper"]
		return BoundsResult(lo.value, hi.value, method="outer-dual",
							flags=tuple(sorted(set(lo.flags) | set(hi.flags))),
							multipliers={"lower": lo.lam, "upper": hi.lam},
							diagnostics={"lower": lo.to_dict(), "upper": hi.to_dict(), "L": blocks.L})
	raise ConfigError(f"unknown method {method!r}")
