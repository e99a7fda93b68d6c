"""Confidence intervals for bounded parameters.

Two procedures are provided.

* :func:`stoye_ci` for mean parameters: bootstrap the smoothed closed-form
  endpoints and form the union of the interval around the estimated bounds
  and the interval around the variance-weighted midpoint.
* :func:`as_confidence_interval` for general parameters: a moment
  inequality interval indexed by dual multipliers, with a plug-in
  asymptotic bootstrap critical value and the supremum over multipliers
  restricted to Gaussian neighbourhoods of the (possibly penalised) dual
  optimisers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dgp import make_rng
from .dual.engine import (
	NEG, POS, DualProblemSpec, OuterConfig, envelope, min_relaxation, outer_optimize,
	penalized_outer_optimize,
)
from .dual.problems import ZETA_MARGIN
from .errors import (
	AnchorError, BootstrapInstabilityError, ConfigError, DivergingMultiplierError, GridTooSmallError,
	InstrumentCollinearityError, NumericalError, SingularDesignError,
)
from .mean_bounds import MisspecificationWarning, refined_from_summary, smoothed_bounds
from .panel import InstrumentBlocks, PanelDataset, gram_factors, moment_summary

KAPPA = 0.05
MAX_DROP_SHARE = 0.10
_BOOT_STREAM = 101
_GRID_STREAM = 202
_PA_STREAM = 303


@dataclass
class BootstrapDiagnostics:
	"""Bootstrap summary of the smoothed endpoints.

	``sigma_l`` and ``sigma_u`` are scaled by ``sqrt(n)``.  ``lower`` and
	``upper`` are the smoothed sample endpoints.
	"""

	sigma_l: float
	sigma_u: float
	rho: float
	B: int
	seed: int
	lower: float
	upper: float
	n: int
	dropped: int = 0
	flags: tuple = ()

	def to_dict(self) -> dict:
		return {"sigma_l": self.sigma_l, "sigma_u": self.sigma_u, "rho": self.rho, "B": self.B, "seed": self.seed,
				"dropped": self.dropped}


@dataclass
class ConfidenceInterval:
	lower: float
	upper: float
	level: float
	method: str
	components: dict = field(default_factory=dict)
	flags: tuple = ()
	diagnostics: dict = field(default_factory=dict)

	def contains(self, x: float) -> bool:
		return self.lower <= x <= self.upper

	@property
	def width(self) -> float:
		return self.upper - self.lower

	def to_dict(self) -> dict:
		def num(v):
			return None if v is None or not np.isfinite(v) else float(v)

		return {
			"method": self.method,
			"level": self.level,
			"lower": num(self.lower),
			"upper": num(self.upper),
			"diagnostics": {k: (num(v) if isinstance(v, float) else v) for k, v in self.diagnostics.items()},
			"flags": list(self.flags),
		}


# --------------------------------------------------------------------------
# Mean parameters

def _smoothed_endpoints(summary, e):
	res = refined_from_summary(summary, e)
	return smoothed_bounds(res.center, res.e_term, res.d_term)


def bootstrap_mean(data: PanelDataset, blocks: InstrumentBlocks, e, B: int = 100, seed: int = 0) -> BootstrapDiagnostics:
	"""Resample individuals and recompute the smoothed refined endpoints.

	Replicates whose instrument matrix is singular are dropped; more than
	10% of drops raises :class:`BootstrapInstabilityError`.  When either
	endpoint has no bootstrap variation the correlation is set to 1.
	"""
	if B < 2:
		raise ConfigError("at least two bootstrap replicates are required")
	e = np.asarray(e, dtype=float)
	n = data.n
	factors = gram_factors(data)
	with warnings.catch_warnings():
		warnings.simplefilter("ignore", MisspecificationWarning)
		lo, hi = _smoothed_endpoints(moment_summary(data, blocks, factors=factors), e)
		rng = make_rng(seed, _BOOT_STREAM)
		reps = []
		dropped = 0
		for _ in range(B):
			counts = rng.multinomial(n, data.w)
			try:
				reps.append(_smoothed_endpoints(moment_summary(data, blocks, weights=counts, factors=factors), e))
			except (InstrumentCollinearityError, SingularDesignError):
				dropped += 1
	if dropped > MAX_DROP_SHARE * B:
		raise BootstrapInstabilityError(f"{dropped} of {B} replicates had a singular instrument matrix",
										dropped=dropped, B=B)
	reps = np.asarray(reps)
	sd = reps.std(axis=0, ddof=1)
	flags = []
	if np.all(sd > 1e-12 * (1.0 + np.abs(reps).max())):
		rho = float(np.clip(np.corrcoef(reps.T)[0, 1], -1.0, 1.0))
	else:
		rho = 1.0
		flags.append("zero_variance")
		sd = np.where(sd > 1e-12 * (1.0 + np.abs(reps).max()), sd, 0.0)
	root = np.sqrt(n)
	return BootstrapDiagnostics(float(root * sd[0]), float(root * sd[1]), rho, B, seed, float(lo), float(hi), n,
								dropped, tuple(flags))


def stoye_critical_value(rho: float, alpha: float) -> float:
	"""Critical value for the interval around the estimated bounds.

	One-sided normal quantile when the endpoint correlation is below 0.8,
	two-sided at a correlation of one, linear in between (1.64 and 1.96
	for ``alpha = 0.05``).
	"""
	if alpha <= 0:
		return np.inf
	one, two = stats.norm.ppf(1 - alpha), stats.norm.ppf(1 - alpha / 2)
	if not np.isfinite(rho):
		return float(two)
	t = np.clip((rho - 0.8) / 0.2, 0.0, 1.0)
	return float(one + t * (two - one))


def stoye_ci(data: PanelDataset, blocks: InstrumentBlocks, e, alpha: float = 0.05, B: int = 100, seed: int = 0,
			 diagnostics: BootstrapDiagnostics | None = None) -> ConfidenceInterval:
	"""Union of the bounds interval and the pseudo-true parameter interval.

	The returned interval is the hull of the union; ``components`` keeps
	both pieces (the bounds interval can be empty when the estimated
	endpoints cross).
	"""
	if not 0 <= alpha < 1:
		raise ConfigError("alpha must lie in [0, 1)")
	dg = bootstrap_mean(data, blocks, e, B, seed) if diagnostics is None else diagnostics
	lo, hi, sl, su, root = dg.lower, dg.upper, dg.sigma_l, dg.sigma_u, np.sqrt(dg.n)
	c = stoye_critical_value(dg.rho, alpha)
	flags = list(dg.flags)
	diag = dict(dg.to_dict(), c_alpha=c)
	if sl + su <= 0:
		flags.append("degenerate")
		return ConfidenceInterval(lo, lo, 1 - alpha, "stoye-union", {"mu_star": lo}, tuple(flags), diag)
	i_mu = (lo - c * sl / root, hi + c * su / root)
	mu_star = (su * lo + sl * hi) / (sl + su)
	s_star = sl * su * np.sqrt(2 + 2 * dg.rho) / (sl + su)
	z = stats.norm.ppf(1 - alpha / 2) if alpha > 0 else np.inf
	i_star = (mu_star - z * s_star / root, mu_star + z * s_star / root)
	if i_mu[0] > i_mu[1]:
		flags.append("empty_bounds_interval")
		lower, upper = i_star
	else:
		if i_star[0] > i_mu[1] or i_star[1] < i_mu[0]:
			flags.append("disjoint_union")
		lower, upper = min(i_mu[0], i_star[0]), max(i_mu[1], i_star[1])
	diag.update(mu_star=float(mu_star), sigma_star=float(s_star))
	comps = {"bounds_interval": [float(i_mu[0]), float(i_mu[1])], "pseudo_true_interval": [float(i_star[0]),
			 float(i_star[1])], "mu_star": float(mu_star)}
	return ConfidenceInterval(float(lower), float(upper), 1 - alpha, "stoye-union", comps, tuple(flags), diag)


# --------------------------------------------------------------------------
# Moment inequality interval

@dataclass
class LambdaGrid:
	"""Multiplier points around the lower and upper anchors (anchors first)."""

	anchor_l: np.ndarray
	anchor_u: np.ndarray
	points_l: np.ndarray
	points_u: np.ndarray
	scale_l: float
	scale_u: float
	seed: int

	@property
	def L(self) -> int:
		return self.points_l.shape[0]

	def head(self, L: int) -> "LambdaGrid":
		"""The first ``L`` points per side (a nested sub-grid)."""
		if L < 2 or L > self.L:
			raise GridTooSmallError(f"sub-grid size must lie in [2, {self.L}]")
		return LambdaGrid(self.anchor_l, self.anchor_u, self.points_l[:L], self.points_u[:L], self.scale_l,
						  self.scale_u, self.seed)


def default_scale(anchor, n: int) -> float:
	return 0.5 * (1.0 + float(np.max(np.abs(anchor), initial=0.0))) / np.sqrt(n)


def _project(points, domain, strict: float):
	out = points.copy()
	for k, dom in enumerate(domain or ()):
		if dom == NEG:
			out[:, k] = np.minimum(out[:, k], -strict)
		elif dom == POS:
			out[:, k] = np.maximum(out[:, k], strict)
		elif isinstance(dom, tuple):
			out[:, k] = np.maximum(out[:, k], float(dom[1]) + strict)
	return out


def build_lambda_grid(anchors, L: int = 100, scale=None, seed: int = 0, n: int | None = None,
					  domains=(None, None), strict: float = 1e-10) -> LambdaGrid:
	"""Gaussian perturbations of the two anchors, anchors included.

	Parameters
	----------
	anchors : pair of array_like
		Lower and upper anchor multipliers.
	L : int
		Points per side, including the anchor.
	scale : float or pair, optional
		Perturbation standard deviation; defaults to
		``0.5 (1 + max|anchor|) / sqrt(n)``.
	domains : pair of tuples, optional
		Sign restrictions; perturbed points are projected onto them.

	Notes
	-----
	Draws are sequential, so the grid of size ``L`` is the leading block of
	any larger grid with the same seed.
	"""
	if L < 2:
		raise GridTooSmallError("the grid needs the anchor plus at least one perturbation", L=L)
	al, au = (np.asarray(a, dtype=float) for a in anchors)
	if scale is None:
		if n is None:
			raise ConfigError("sample size required for the default perturbation scale")
		scale = (default_scale(al, n), default_scale(au, n))
	elif np.isscalar(scale):
		scale = (float(scale), float(scale))
	out = []
	for side, (a, s, dom) in enumerate(zip((al, au), scale, domains)):
		z = make_rng(seed, _GRID_STREAM, side).standard_normal((L - 1, a.size))
		pts = np.vstack([a[None, :], a[None, :] + s * z])
		out.append(_project(pts, dom, strict) if dom is not None else pts)
	return LambdaGrid(al, au, out[0], out[1], float(scale[0]), float(scale[1]), seed)


@dataclass
class GridValues:
	"""Per-individual inner values at every grid point, shape (n, L)."""

	g_l: np.ndarray
	g_u: np.ndarray
	weights: np.ndarray
	flags: tuple = ()

	@property
	def n(self) -> int:
		return self.g_l.shape[0]

	def moments(self, kappa: float = KAPPA):
		w = self.weights
		out = []
		for g in (self.g_l, self.g_u):
			mu = w @ g
			var = _clean_var(w @ (g - mu) ** 2, w @ (g * g))
			out += [mu, np.sqrt((1 + kappa) * var)]
		return tuple(out)

	def head(self, L: int) -> "GridValues":
		return GridValues(self.g_l[:, :L], self.g_u[:, :L], self.weights, self.flags)


def grid_values(spec_l: DualProblemSpec, spec_u: DualProblemSpec, grid: LambdaGrid) -> GridValues:
	"""Evaluate the inner problems of both sides on the grid.

	Points where some inner value is infinite (unbounded inner problem)
	are replaced by their side's anchor and flagged.
	"""
	cols = []
	flags = []
	for spec, pts in ((spec_l, grid.points_l), (spec_u, grid.points_u)):
		vals = np.empty((spec.n, pts.shape[0]))
		anchor = None
		for j, lam in enumerate(pts):
			v = envelope(lam, spec, per_individual=True).values
			if not np.all(np.isfinite(v)):
				if anchor is None:
					anchor = envelope(pts[0], spec, per_individual=True).values
				v = anchor
				flags.append(f"{spec.side}_point_{j}_unbounded")
			vals[:, j] = v
		cols.append(vals)
	return GridValues(cols[0], cols[1], spec_l.weights, tuple(flags))


def _clean_var(var, second, rel=1e-12):
	"""Variances at rounding level of the second moment are set to zero."""
	return np.where(var > rel * np.abs(second), var, 0.0)


def _ratio(num, den, tol=1e-12):
	# zero scale: +inf when the numerator is clearly positive, otherwise ignored
	with np.errstate(divide="ignore", invalid="ignore"):
		r = num / den
	zero = den <= 0
	return np.where(zero, np.where(num > tol, np.inf, -np.inf), r)


def as_test_statistic(values: GridValues, theta: float, kappa: float = KAPPA) -> float:
	"""Squared positive part of the largest studentised violation over the grid."""
	mu_l, sd_l, mu_u, sd_u = values.moments(kappa)
	root = np.sqrt(values.n)
	a = _ratio(root * (mu_l - theta), sd_l)
	b = _ratio(root * (theta - mu_u), sd_u)
	m = max(np.max(a), np.max(b), 0.0)
	return float(m * m)


def pa_bootstrap_draws(values: GridValues, B: int = 100, seed: int = 0, kappa: float = KAPPA) -> np.ndarray:
	"""Per-draw, per-grid-point bootstrap statistics before the supremum.

	Returns an array of shape (B, L): the larger of the two recentred,
	studentised deviations (not yet floored at zero or squared).  The
	cumulative maximum over columns gives the statistic for every nested
	sub-grid.
	"""
	n = values.n
	w = values.weights
	mu_l, _, mu_u, _ = values.moments(kappa)
	rng = make_rng(seed, _PA_STREAM)
	counts = rng.multinomial(n, w, size=B).astype(float) / n
	root = np.sqrt(n)
	out = np.empty((B, values.g_l.shape[1]))
	parts = []
	for g, mu, sgn in ((values.g_l, mu_l, 1.0), (values.g_u, mu_u, -1.0)):
		mb = counts @ g
		g2 = counts @ (g * g)
		vb = _clean_var(g2 - mb * mb, g2)
		sb = np.sqrt((1 + kappa) * vb)
		parts.append(_ratio(sgn * root * (mb - mu[None, :]), sb))
	np.maximum(parts[0], parts[1], out=out)
	return out


def pa_critical_from_draws(draws: np.ndarray, alpha: float) -> float:
	if alpha <= 0:
		return np.inf
	c = np.maximum(np.max(draws, axis=1), 0.0) ** 2
	return float(np.quantile(c, 1 - alpha))


def as_pa_critical_value(values: GridValues, alpha: float = 0.1, B: int = 100, seed: int = 0,
						 kappa: float = KAPPA) -> float:
	"""``1 - alpha`` quantile of the bootstrap supremum statistics (independent of theta)."""
	return pa_critical_from_draws(pa_bootstrap_draws(values, B, seed, kappa), alpha)


def pa_interval(values: GridValues, c_alpha: float, kappa: float = KAPPA) -> tuple[float, float]:
	"""Interval of parameter values not rejected at critical value ``c_alpha``."""
	mu_l, sd_l, mu_u, sd_u = values.moments(kappa)
	root = np.sqrt(values.n)
	q = np.sqrt(c_alpha)
	with np.errstate(invalid="ignore"):
		lo = np.max(np.where(sd_l > 0, mu_l - q * sd_l / root, mu_l))
		hi = np.min(np.where(sd_u > 0, mu_u + q * sd_u / root, mu_u))
	return float(lo), float(hi)


@dataclass
class Anchors:
	lower: np.ndarray
	upper: np.ndarray
	zeta: float
	zeta_star: float
	penalised: tuple
	flags: tuple = ()
	values: tuple = (np.nan, np.nan)


def find_anchors(spec_l: DualProblemSpec, spec_u: DualProblemSpec, penalised=(), zeta: float | None = None,
				 margin: float = ZETA_MARGIN, config: OuterConfig | None = None) -> Anchors:
	"""Dual optimisers used as grid centres.

	Without penalised moments the plain optimisers are returned and a
	divergence raises :class:`DivergingMultiplierError` (pass ``penalised``
	to use the relaxed problems).  With penalised moments ``zeta``
	defaults to ``zeta_star * (1 + margin)`` where ``zeta_star`` is the
	smallest feasible relaxation.
	"""
	cfg = config or OuterConfig()
	penalised = tuple(sorted(set(int(k) for k in penalised)))
	if not penalised:
		lo, hi = outer_optimize(spec_l, config=cfg), outer_optimize(spec_u, config=cfg)
		if "diverging" in lo.flags or "diverging" in hi.flags:
			raise DivergingMultiplierError("dual optimisers diverge; supply penalised moments for the relaxed anchors")
		return Anchors(lo.lam, hi.lam, 0.0, 0.0, (), values=(lo.value, hi.value))
	try:
		zstar = min_relaxation(spec_l, penalised, cfg)
	except NumericalError as exc:
		raise AnchorError("minimal relaxation failed") from exc
	z = zstar * (1 + margin) + 1e-12 if zeta is None else float(zeta)
	if z < zstar:
		raise ConfigError(f"penalty {z:.3g} is below the minimal relaxation {zstar:.3g}")
	try:
		lo = penalized_outer_optimize(spec_l, z, penalised, config=cfg)
		hi = penalized_outer_optimize(spec_u, z, penalised, config=cfg)
	except NumericalError as exc:
		raise AnchorError("penalised dual failed") from exc
	flags = tuple(sorted(set(lo.flags) | set(hi.flags)))
	if "diverging" in flags:
		raise AnchorError("penalised dual optimisers diverge", zeta=z, zeta_star=zstar)
	return Anchors(lo.lam, hi.lam, z, zstar, penalised, flags, (lo.value, hi.value))


def as_confidence_interval(spec_l: DualProblemSpec, spec_u: DualProblemSpec, alpha: float = 0.1, L: int = 100,
						   B: int = 100, seed: int = 0, penalised=(), zeta: float | None = None,
						   margin: float = ZETA_MARGIN, scale=None, anchors: Anchors | None = None,
						   config: OuterConfig | None = None) -> ConfidenceInterval:
	"""Moment inequality interval with plug-in asymptotic critical value.

	Parameters
	----------
	spec_l, spec_u : DualProblemSpec
		Lower and upper dual problems of the same parameter.
	L : int
		Grid points per side, anchor included.
	penalised : sequence of int
		Moments relaxed by the ``L1`` penalty when computing the anchors.
	"""
	if not 0 <= alpha < 1:
		raise ConfigError("alpha must lie in [0, 1)")
	anc = find_anchors(spec_l, spec_u, penalised, zeta, margin, config) if anchors is None else anchors
	grid = build_lambda_grid((anc.lower, anc.upper), L, scale, seed, spec_l.n, (spec_l.domain, spec_u.domain))
	vals = grid_values(spec_l, spec_u, grid)
	c = as_pa_critical_value(vals, alpha, B, seed)
	lo, hi = pa_interval(vals, c)
	flags = list(anc.flags) + list(vals.flags)
	if lo > hi:
		flags.append("empty")
	if anc.penalised:
		flags.append("heuristic_penalised")
	diag = {"c_alpha": c, "B": B, "seed": seed, "L": L, "zeta": anc.zeta, "zeta_star": anc.zeta_star,
			"scale_l": grid.scale_l, "scale_u": grid.scale_u}
	comps = {"anchor_lower": anc.lower.tolist(), "anchor_upper": anc.upper.tolist(), "anchor_values": list(anc.values)}
	return ConfidenceInterval(lo, hi, 1 - alpha, "as-pa", comps, tuple(flags), diag)


def bonferroni_variance(first: ConfidenceInterval, second: ConfidenceInterval) -> ConfidenceInterval:
	"""Interval for ``E(b^2) - E(b)^2`` from intervals for the two moments.

	Each input should be built at half the target ``alpha``.
	"""
	m_lo, m_hi = first.lower, first.upper
	sq_max = max(m_lo * m_lo, m_hi * m_hi)
	sq_min = 0.0 if m_lo <= 0 <= m_hi else min(m_lo * m_lo, m_hi * m_hi)
	lo = max(second.lower - sq_max, 0.0)
	hi = second.upper - sq_min
	level = 1 - ((1 - first.level) + (1 - second.level))
	return ConfidenceInterval(lo, hi, level, "bonferroni", {"first": [m_lo, m_hi], "second": [second.lower, second.upper]},
							  tuple(sorted(set(first.flags) | set(second.flags))))
