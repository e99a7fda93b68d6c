"""Builders for the mean, second-moment and distribution-function duals.

All builders use the moment set

    E[ sum_t (R_it'B) eps_it ] = 0   and   E[ S_it eps_it ] = 0,

with ``eps_it = Y_it - R_it'B``.  The first moment carries the multiplier
``lambda`` and the instrument moments the vector ``mu``.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..errors import Assumption7Violation, ConfigError
from ..mean_bounds import BoundsResult
from ..panel import InstrumentBlocks, PanelDataset
from .engine import (
	FREE, NEG, POS, BoundsSide, DualProblemSpec, IndicatorSplit, MomentSet, OuterConfig, QuadraticForm,
	SupportRegion, min_relaxation, outer_optimize, penalized_outer_optimize,
)

ZETA_MARGIN = 0.5
RELAX_TOL = 1e-8


def moment_set(data: PanelDataset, blocks: InstrumentBlocks | None, baseline: bool = False) -> MomentSet:
	"""Moment functions of the refined (or baseline) mean problem.

	With ``baseline=True`` the instrument moments are replaced by the pooled
	orthogonality ``E[R_i'eps_i] = 0``.
	"""
	ry = np.einsum("ntj,nt->nj", data.r, data.y)
	rr = data.gram()
	consts = [np.zeros((data.n, 1))]
	lins = [ry[:, None, :]]
	names = ["sum_t (R_t'b) eps_t"]
	if baseline:
		consts.append(ry)
		lins.append(-rr)
		names += [f"R'eps[{j}]" for j in range(data.d)]
	elif blocks is not None:
		consts.append(blocks.sy(data))
		lins.append(-blocks.sr(data))
		names += list(blocks.labels)
	return MomentSet(np.concatenate(consts, axis=1), np.concatenate(lins, axis=1), {0: -rr}, tuple(names))


def _region(box) -> SupportRegion:
	if box is None:
		return SupportRegion()
	if isinstance(box, SupportRegion):
		return box
	lo, hi = box
	return SupportRegion.box(lo, hi)


def _domain(K: int, first) -> tuple:
	return (first,) + (FREE,) * (K - 1)


def mean_problem(data: PanelDataset, blocks: InstrumentBlocks | None, e, side: str = "lower", box=None,
				 baseline: bool = False) -> DualProblemSpec:
	"""Dual of the mean bound for ``E(e'B)``.

	Without a box the inner problems are unconstrained and the dual
	reproduces the closed-form bounds.
	"""
	ms = moment_set(data, blocks, baseline)
	obj = QuadraticForm.linear(data.n, np.asarray(e, dtype=float))
	first = NEG if side == "lower" else POS
	return DualProblemSpec(obj, ms, _region(box), _domain(ms.K, first), side, data.w, "mean")


def relaxation(spec: DualProblemSpec, relax: str = "auto", margin: float = ZETA_MARGIN,
			   config: OuterConfig | None = None):
	"""Penalty that makes incompatible sample moments usable.

	Every moment is relaxed to ``|E phi_k| <= zeta`` with ``zeta =
	zeta_star (1 + margin)``, where ``zeta_star`` is the smallest feasible
	relaxation.  Returns ``None`` when ``relax == "none"``, or when
	``relax == "auto"`` and the moments hold jointly.

	Returns
	-------
	tuple or None
		``(penalised indices, zeta, zeta_star)``.
	"""
	if relax == "none":
		return None
	if relax not in ("auto", "always"):
		raise ConfigError(f"unknown relaxation mode {relax!r}")
	pen = tuple(range(spec.K))
	zstar = min_relaxation(spec, pen, config)
	if relax == "auto" and zstar <= RELAX_TOL:
		return None
	return pen, zstar * (1.0 + margin) + 1e-12, zstar


def _solve(spec, relax, init=None, config=None) -> BoundsSide:
	if relax is None:
		return outer_optimize(spec, init, config)
	pen, zeta, _ = relax
	return penalized_outer_optimize(spec, zeta, pen, init, config)


def _relax_info(relax) -> dict:
	return {} if relax is None else {"zeta": relax[1], "zeta_star": relax[2]}


def _side_pair(spec_lo: DualProblemSpec, spec_hi: DualProblemSpec, config, init=(None, None), method="dual",
			   relax: str = "none"):
	rx = relaxation(spec_lo, relax, config=config)
	lo = _solve(spec_lo, rx, init[0], config)
	hi = _solve(spec_hi, rx, init[1], config)
	flags = set(lo.flags) | set(hi.flags)
	if rx is not None:
		flags.add("relaxed")
	return BoundsResult(lo.value, hi.value, method=method, flags=tuple(sorted(flags)),
						multipliers={"lower": lo.lam, "upper": hi.lam},
						diagnostics={"lower": lo.to_dict(), "upper": hi.to_dict(), **_relax_info(rx)})


def dual_mean_bounds(data, blocks, e, box=None, config: OuterConfig | None = None, init=(None, None),
					 baseline: bool = False, relax: str = "none") -> BoundsResult:
	"""Mean bounds by numerical optimisation of the dual.

	``relax`` selects the treatment of incompatible sample moments (see
	:func:`relaxation`).
	"""
	return _side_pair(mean_problem(data, blocks, e, "lower", box, baseline),
					  mean_problem(data, blocks, e, "upper", box, baseline), config, init, "dual-mean", relax)


def selector(d: int, j: int) -> np.ndarray:
	"""Diagonal matrix with a single one at position ``j``."""
	e0 = np.zeros((d, d))
	e0[j, j] = 1.0
	return e0


def _check_selector(e0):
	e0 = np.asarray(e0, dtype=float)
	if e0.ndim == 1:
		e0 = np.diag(e0)
	if not (np.allclose(e0, np.diag(np.diag(e0))) and np.isclose(np.trace(e0), 1.0)
			and np.count_nonzero(np.diag(e0)) == 1 and np.max(e0) == 1.0):
		raise ConfigError("e0 must be diagonal with a single unit entry")
	return e0


def variance_problem(data, blocks, e0, box, side: str = "lower", lambda_min: float | None = None) -> DualProblemSpec:
	"""Dual of the second-moment bound for ``E(B'e0 B)``."""
	e0 = _check_selector(e0)
	if box is None:
		raise ConfigError("a bounded support is required for second-moment bounds")
	ms = moment_set(data, blocks)
	obj = QuadraticForm.quadratic(data.n, e0)
	if side == "lower":
		first = NEG
	else:
		first = ("ge", float(estimate_lambda_min(data) if lambda_min is None else lambda_min))
	return DualProblemSpec(obj, ms, _region(box), _domain(ms.K, first), side, data.w, "second-moment")


def variance_lower(data, blocks, e0, box, config: OuterConfig | None = None, init=None, relax=None) -> BoundsSide:
	"""Lower bound on the second moment (convex inner problems, ``lambda < 0``).

	``relax`` is ``None`` or a tuple from :func:`relaxation`.
	"""
	return _solve(variance_problem(data, blocks, e0, box, "lower"), relax, init, config)


def estimate_lambda_min(data: PanelDataset, slack: float = 0.01) -> float:
	"""Smallest admissible multiplier ``1 / (nu_min (1 - slack))``."""
	nu = np.linalg.eigvalsh(data.gram())[:, 0]
	nu = nu[data.w > 0]
	if nu.min() <= 0:
		raise Assumption7Violation("some R'R is singular", indices=np.flatnonzero(nu <= 0)[:50])
	return 1.0 / (nu.min() * (1.0 - slack))


def variance_upper(data, blocks, e0, box, lambda_min: float | None = None, config: OuterConfig | None = None,
				   init=None, relax=None) -> BoundsSide:
	"""Upper bound on the second moment with ``lambda >= lambda_min``.

	Raises
	------
	Assumption7Violation
		If some ``R_i'R_i`` has smallest eigenvalue ``<= 1 / lambda_min``.
	"""
	if lambda_min is None:
		lambda_min = estimate_lambda_min(data)
	if lambda_min <= 0:
		raise ConfigError("lambda_min must be positive")
	nu = np.linalg.eigvalsh(data.gram())[:, 0]
	bad = np.flatnonzero((nu <= 1.0 / lambda_min) & (data.w > 0))
	if bad.size:
		raise Assumption7Violation(f"{bad.size} individual(s) with smallest Gram eigenvalue <= 1/lambda_min",
								   indices=bad[:50], lambda_min=lambda_min)
	spec = variance_problem(data, blocks, e0, box, "upper", lambda_min)
	return _solve(spec, relax, init, config)


def _diagonal_range(e0, box):
	"""Range of ``b'e0 b`` over the box when ``e0`` is diagonal, else ``None``."""
	e0 = np.asarray(e0, dtype=float)
	if np.count_nonzero(e0 - np.diag(np.diag(e0))):
		return None
	lo, hi = (np.asarray(v, dtype=float) for v in box)
	sq_hi = np.maximum(lo ** 2, hi ** 2)
	sq_lo = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(lo ** 2, hi ** 2))
	w = np.diag(e0)
	return float(np.sum(np.where(w >= 0, w * sq_lo, w * sq_hi))), float(np.sum(np.where(w >= 0, w * sq_hi, w * sq_lo)))


def variance_bounds(data, blocks, e0, box, lambda_min=None, config=None, relax: str = "none") -> BoundsResult:
	"""Bounds on the second moment ``E(B'e0 B)``.

	For diagonal ``e0`` the dual bounds are intersected with the range of
	``b'e0 b`` over the box (flag ``box-clipped`` when this binds).
	"""
	rx = relaxation(variance_problem(data, blocks, e0, box, "lower"), relax, config=config)
	lo = variance_lower(data, blocks, e0, box, config, relax=rx)
	hi = variance_upper(data, blocks, e0, box, lambda_min, config, relax=rx)
	flags = set(lo.flags) | set(hi.flags)
	if rx is not None:
		flags.add("relaxed")
	lv, uv = lo.value, hi.value
	rng = _diagonal_range(e0, box)
	if rng is not None and (lv < rng[0] or uv > rng[1]):
		lv, uv = max(lv, rng[0]), min(uv, rng[1])
		flags.add("box-clipped")
	return BoundsResult(lv, uv, method="second-moment", flags=tuple(sorted(flags)),
						multipliers={"lower": lo.lam, "upper": hi.lam},
						diagnostics={"lower": lo.to_dict(), "upper": hi.to_dict(), **_relax_info(rx)})


def cdf_problem(data, blocks, e, c: float, box, side: str = "lower") -> DualProblemSpec:
	"""Dual of the bound on ``P(e'B <= c)``."""
	if box is None:
		raise ConfigError("a bounded support is required for distribution bounds")
	ms = moment_set(data, blocks)
	obj = IndicatorSplit(np.asarray(e, dtype=float), float(c))
	first = NEG if side == "lower" else POS
	return DualProblemSpec(obj, ms, _region(box), _domain(ms.K, first), side, data.w, "cdf")


def cdf_bounds(data, blocks, e, c, box, config: OuterConfig | None = None, relax: str = "none") -> BoundsResult:
	"""Bounds on ``P(e'B <= c)`` clipped to ``[0, 1]``."""
	return cdf_bounds_grid(data, blocks, e, [c], box, config, relax=relax)[0]


def cdf_bounds_grid(data, blocks, e, thresholds, box, config: OuterConfig | None = None,
					cross_check: bool = True, relax: str = "none") -> list[BoundsResult]:
	"""Distribution bounds over a grid of thresholds.

	Each side is optimised separately per threshold.  With ``cross_check``
	every multiplier found on the grid is re-evaluated at every threshold
	and the best value kept; any multiplier gives a valid bound, so this
	only tightens results that the nonsmooth search left short.
	"""
	from .engine import envelope

	thresholds = [float(c) for c in thresholds]
	rx = relaxation(cdf_problem(data, blocks, e, thresholds[0], box, "lower"), relax, config=config)
	raw = {}
	for side in ("lower", "upper"):
		for c in thresholds:
			spec = cdf_problem(data, blocks, e, c, box, side)
			raw[(side, c)] = _solve(spec, rx, None, config)
	if cross_check and len(thresholds) > 1:
		for side in ("lower", "upper"):
			lams = [raw[(side, c)].lam for c in thresholds]
			for c in thresholds:
				spec = cdf_problem(data, blocks, e, c, box, side)
				cur = raw[(side, c)]
				for lam in lams:
					v = envelope(lam, spec).value
					if rx is not None:
						v -= (1.0 if side == "lower" else -1.0) * rx[1] * float(np.sum(np.abs(lam[list(rx[0])])))
					if (side == "lower" and v > cur.value) or (side == "upper" and v < cur.value):
						cur = replace(cur, value=v, lam=lam)
				raw[(side, c)] = cur
	# F is nondecreasing, so a lower bound at c holds at every larger
	# threshold and an upper bound at every smaller one
	order = np.argsort(thresholds, kind="stable")
	lows = np.array([raw[("lower", c)].value for c in thresholds])
	ups = np.array([raw[("upper", c)].value for c in thresholds])
	mono_lo = lows.copy()
	mono_up = ups.copy()
	mono_lo[order] = np.maximum.accumulate(lows[order])
	mono_up[order] = np.minimum.accumulate(ups[order][::-1])[::-1]
	out = []
	for j, c in enumerate(thresholds):
		lo, hi = raw[("lower", c)], raw[("upper", c)]
		flags = set(lo.flags) | set(hi.flags)
		lv, uv = float(mono_lo[j]), float(mono_up[j])
		if lv != lo.value or uv != hi.value:
			flags.add("monotonized")
		if rx is not None:
			flags.add("relaxed")
		if lv > uv + 1e-8:
			flags.add("crossed")
		out.append(BoundsResult(min(max(lv, 0.0), 1.0), min(max(uv, 0.0), 1.0), method="cdf", flags=tuple(sorted(flags)),
								multipliers={"lower": lo.lam, "upper": hi.lam},
								diagnostics={"threshold": c, "raw_lower": lo.value, "raw_upper": hi.value,
											 **_relax_info(rx)}))
	return out
