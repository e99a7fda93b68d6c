"""Closed-form bounds on the mean of a linear combination of coefficients.

All bounds have the form ``center -/+ 0.5 * sqrt(e_term * d_term)``.  The
``e_term`` measures how much the individual designs vary and the ``d_term``
how far the outcomes are from the model's linear span.  A negative
``d_term`` indicates that the sample moments are mutually inconsistent; the
interval is then reported through the smoothed square root, which may give
``lower > upper``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import HomoCollinearityError, InstrumentCollinearityError
from .panel import InstrumentBlocks, MomentSummary, PanelDataset, moment_summary

D_TOL = 1e-10
COND_LIMIT = 1e12


class MisspecificationWarning(UserWarning):
	"""Sample moments are incompatible (negative ``d_term``)."""


@dataclass(frozen=True)
class BoundsResult:
	"""Interval for a scalar parameter.

	Attributes
	----------
	lower, upper : float
	center, e_term, d_term : float
		Scalars producing the interval (NaN when not applicable).
	method : str
	flags : tuple of str
	multipliers : dict
		Optimal dual multipliers per side when available.
	diagnostics : dict
	"""

	lower: float
	upper: float
	center: float = float("nan")
	e_term: float = float("nan")
	d_term: float = float("nan")
	method: str = ""
	flags: tuple = ()
	multipliers: dict = field(default_factory=dict)
	diagnostics: dict = field(default_factory=dict)

	@property
	def width(self) -> float:
		return self.upper - self.lower

	def contains(self, x: float, tol: float = 0.0) -> bool:
		return self.lower - tol <= x <= self.upper + tol

	def to_dict(self) -> dict:
		def num(v):
			return None if v is None or not np.isfinite(v) else float(v)

		return {
			"lower": num(self.lower),
			"upper": num(self.upper),
			"center": num(self.center),
			"e_term": num(self.e_term),
			"d_term": num(self.d_term),
			"method": self.method,
			"flags": list(self.flags),
		}


def smooth_sqrt(x: float, y: float, r: float) -> float:
	"""``sqrt((xy + sqrt((xy)^2 + r^2)) / 2)``, a smooth stand-in for ``sqrt(max(xy, 0))``."""
	xy = x * y
	return float(np.sqrt(0.5 * (xy + np.hypot(xy, r))))


def default_smoothing(e: float, d: float) -> float:
	return 1e-6 * (1.0 + abs(e * d))


def smoothed_bounds(b: float, e: float, d: float, r: float | None = None) -> tuple[float, float]:
	"""Smoothed interval ``b -/+ (s(e, d) - s(e, -d)) / 2``.

	For ``d > 0`` this is within ``O(r)`` of the exact interval, for
	``d < 0`` the endpoints cross.
	"""
	if r is None:
		r = default_smoothing(e, d)
	half = 0.5 * (smooth_sqrt(e, d, r) - smooth_sqrt(e, -d, r))
	return b - half, b + half


def _finish(center, e_term, d_term, method, extra_flags=(), multipliers=None, diagnostics=None) -> BoundsResult:
	flags = list(extra_flags)
	if e_term < -1e-10:
		flags.append("negative_e")
	e_term = max(e_term, 0.0)
	if d_term < -D_TOL * (1.0 + abs(d_term)):
		flags.append("negative_d")
		warnings.warn(f"{method}: d_term = {d_term:.3g} < 0, reporting smoothed interval", MisspecificationWarning,
					  stacklevel=3)
		lo, hi = smoothed_bounds(center, e_term, d_term)
	else:
		half = 0.5 * np.sqrt(e_term * max(d_term, 0.0))
		lo, hi = center - half, center + half
	return BoundsResult(lo, hi, center, e_term, d_term, method, tuple(flags), multipliers or {}, diagnostics or {})


def _sym_solve(mat, rhs, err, what):
	ev = np.linalg.eigvalsh(mat)
	scale = np.max(np.abs(ev)) if ev.size else 1.0
	if ev.size and np.min(np.abs(ev)) <= scale / COND_LIMIT:
		raise err(f"{what} is numerically singular (condition {scale / max(np.min(np.abs(ev)), 1e-300):.3g})",
				  condition=float(scale / max(np.min(np.abs(ev)), 1e-300)))
	return linalg.solve(mat, rhs, assume_a="sym"), float(scale / np.min(np.abs(ev))) if ev.size else 1.0


def baseline_from_summary(s: MomentSummary, e) -> BoundsResult:
	e = np.asarray(e, dtype=float)
	rr_inv_e = np.linalg.solve(s.rr, e)
	b0 = np.linalg.solve(s.rr, s.ry)
	center = 0.5 * e @ s.bhat + 0.5 * e @ b0
	e_term = e @ s.r0 @ e - e @ rr_inv_e
	d_term = s.m0 - s.ry @ b0
	return _finish(center, e_term, d_term, "baseline")


def baseline_bounds(data: PanelDataset, e) -> BoundsResult:
	"""Bounds using only orthogonality of the regressors and the errors."""
	return baseline_from_summary(moment_summary(data), e)


def refined_from_summary(s: MomentSummary, e) -> BoundsResult:
	e = np.asarray(e, dtype=float)
	if s.v_s.size == 0:
		raise InstrumentCollinearityError("no instruments supplied")
	pe = s.p_s @ e
	z = 2.0 * s.y_s - s.yy_s
	sol, cond = _sym_solve(s.v_s, np.column_stack([pe, z]), InstrumentCollinearityError, "instrument matrix")
	vp, vz = sol[:, 0], sol[:, 1]
	center = 0.5 * e @ s.bhat + 0.5 * pe @ vz
	e_term = e @ s.r0 @ e - pe @ vp
	d_term = s.m0 - z @ vz
	mult = {}
	if e_term > 0 and d_term > 0:
		lam = np.sqrt(e_term / d_term)
		mult = {"upper": np.concatenate([[lam], vp - lam * vz]), "lower": np.concatenate([[-lam], vp + lam * vz])}
	return _finish(center, e_term, d_term, "refined", multipliers=mult, diagnostics={"condition": cond})


def refined_bounds(data: PanelDataset, blocks: InstrumentBlocks, e, summary: MomentSummary | None = None) -> BoundsResult:
	"""Bounds using per-period instrument orthogonality.

	The multipliers (``lambda`` first, then one per instrument entry) solve
	the dual problem and are returned for cross-checks.
	"""
	s = moment_summary(data, blocks) if summary is None else summary
	return refined_from_summary(s, e)


def homogeneous_from_summary(s: MomentSummary, e) -> BoundsResult:
	e = np.asarray(e, dtype=float)
	if s.v_m is None:
		raise HomoCollinearityError("dataset has no common-coefficient regressors")
	a = s.v_m - s.m0_m
	ev = np.linalg.eigvalsh(a)
	if ev[-1] >= -1e-12 * max(1.0, np.max(np.abs(ev))):
		raise HomoCollinearityError("common-coefficient regressors are spanned by R for almost every individual",
									max_eigenvalue=float(ev[-1]))
	cond_a = float(ev[0] / ev[-1])
	if cond_a > COND_LIMIT:
		raise HomoCollinearityError(f"ill-conditioned common-coefficient block (condition {cond_a:.3g})")
	cd = s.c - s.cc
	pme = s.p_m @ e
	ym = s.y_m - s.yy_m
	ainv = np.linalg.solve(a, np.column_stack([cd.T, pme, ym]))
	ainv_cd, ainv_pme, ainv_ym = ainv[:, :-2], ainv[:, -2], ainv[:, -1]
	vt = s.v_s - cd @ ainv_cd
	vt = 0.5 * (vt + vt.T)
	q = s.p_s @ e + cd @ ainv_pme
	y = 2.0 * s.y_s - s.yy_s + cd @ ainv_ym
	if vt.size:
		sol, cond = _sym_solve(vt, np.column_stack([q, y]), InstrumentCollinearityError, "concentrated instrument matrix")
		vq, vy = sol[:, 0], sol[:, 1]
	else:
		vq = vy = np.zeros(0)
		cond = 1.0
	center = 0.5 * e @ s.bhat + 0.5 * pme @ ainv_ym + 0.5 * q @ vy
	e_term = e @ s.r0 @ e - pme @ ainv_pme - q @ vq
	d_term = s.m0 - ym @ ainv_ym - y @ vy
	diag = {"condition": cond, "condition_m": cond_a}
	mult = {}
	if e_term > 0 and d_term > 0:
		for side, lam in (("upper", np.sqrt(e_term / d_term)), ("lower", -np.sqrt(e_term / d_term))):
			mu = vq - lam * vy
			# common coefficient implied by the first-order condition at the optimum
			delta = -np.linalg.solve(a, lam * ym - cd.T @ mu - pme) / (2.0 * lam)
			mult[side] = np.concatenate([[lam], mu])
			diag[f"delta_{side}"] = delta
	return _finish(center, e_term, d_term, "homogeneous", multipliers=mult, diagnostics=diag)


def homogeneous_bounds(data: PanelDataset, blocks: InstrumentBlocks | None, e,
					   summary: MomentSummary | None = None) -> BoundsResult:
	"""Bounds when some regressors ``M`` carry a common coefficient.

	The common coefficient is concentrated out of the dual problem; its
	value at each optimum is reported in ``diagnostics``.
	"""
	s = moment_summary(data, blocks) if summary is None else summary
	return homogeneous_from_summary(s, e)


def smoothed_result(res: BoundsResult, r: float | None = None) -> BoundsResult:
	"""Replace the endpoints of ``res`` by their smoothed counterparts."""
	lo, hi = smoothed_bounds(res.center, res.e_term, res.d_term, r)
	return BoundsResult(lo, hi, res.center, res.e_term, res.d_term, "smoothed", res.flags, res.multipliers,
						res.diagnostics)
