"""Dual (multiplier) representation of moment-restricted bounds.

For a parameter ``E m(W, B)`` restricted by ``E phi_k(W, B) = 0`` the lower
bound equals ``max_lambda E min_b {m(W, b) + sum_k lambda_k phi_k(W, b)}``
and the upper bound the analogous ``min``/``max`` problem.  Both the
objective and every moment function are quadratic in ``b`` here, so the
inner problem is a small quadratic program solved exactly per individual
(:mod:`.qp`).  The outer value is concave (lower side) or convex (upper
side) in ``lambda`` with gradient equal to the average moment at the inner
optimisers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, sparse

from ..errors import ConfigError, DivergingMultiplierError, EmptySideError, InfeasibleRelaxationError
from .qp import quad_value, solve_box_qp

LAMBDA_CAP = 1e6


@dataclass(frozen=True)
class QuadraticForm:
	"""Batch of quadratics ``c + g'b + b'Hb``.

	Shapes are ``(n,)``, ``(n, d)`` and ``(n, d, d)``.
	"""

	c: np.ndarray
	g: np.ndarray
	H: np.ndarray

	def __post_init__(self):
		H = np.asarray(self.H, dtype=float)
		if np.max(np.abs(H - np.swapaxes(H, -1, -2)), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(H), initial=0.0)):
			raise ConfigError("Hessian must be symmetric")

	@classmethod
	def linear(cls, n: int, g) -> "QuadraticForm":
		g = np.broadcast_to(np.asarray(g, dtype=float), (n, np.size(g))).copy()
		d = g.shape[1]
		return cls(np.zeros(n), g, np.zeros((n, d, d)))

	@classmethod
	def quadratic(cls, n: int, H) -> "QuadraticForm":
		H = np.broadcast_to(np.asarray(H, dtype=float), (n,) + np.shape(H)).copy()
		return cls(np.zeros(n), np.zeros(H.shape[:2]), H)

	@classmethod
	def zero(cls, n: int, d: int) -> "QuadraticForm":
		return cls(np.zeros(n), np.zeros((n, d)), np.zeros((n, d, d)))

	def take(self, idx) -> "QuadraticForm":
		return QuadraticForm(self.c[idx], self.g[idx], self.H[idx])


@dataclass(frozen=True)
class SupportRegion:
	"""Coefficient support: a box ``lo <= b <= hi``, a finite point set, or everything.

	With ``points`` given the inner problems reduce to picking the best of
	finitely many candidates.
	"""

	lo: np.ndarray | None = None
	hi: np.ndarray | None = None
	points: np.ndarray | None = None

	@property
	def bounded(self) -> bool:
		return self.lo is not None or self.points is not None

	@property
	def discrete(self) -> bool:
		return self.points is not None

	@classmethod
	def finite(cls, points) -> "SupportRegion":
		pts = np.atleast_2d(np.asarray(points, dtype=float))
		if pts.size == 0 or not np.all(np.isfinite(pts)):
			raise ConfigError("finite support needs at least one finite point")
		return cls(points=pts)

	@classmethod
	def box(cls, lo, hi) -> "SupportRegion":
		lo = np.asarray(lo, dtype=float)
		hi = np.asarray(hi, dtype=float)
		if lo.shape != hi.shape or np.any(lo > hi) or not np.all(np.isfinite(lo + hi)):
			raise ConfigError("box needs finite bounds with lo <= hi")
		return cls(lo, hi)


@dataclass(frozen=True)
class IndicatorSplit:
	"""Objective ``1{a'b <= c0}`` (value ``on`` inside, ``off`` outside).

	The outside set is replaced by its closure ``a'b >= c0``.
	"""

	a: np.ndarray
	c0: float
	on: float = 1.0
	off: float = 0.0


@dataclass(frozen=True)
class MomentSet:
	"""Moment functions ``phi_k(W_i, b) = const + lin'b + b'quad b``.

	Attributes
	----------
	const : ndarray, shape (n, K)
	lin : ndarray, shape (n, K, d)
	quad : dict
		Maps a moment index to its Hessians with shape (n, d, d).  Moments
		absent from the dict are linear in ``b``.
	names : tuple of str
	"""

	const: np.ndarray
	lin: np.ndarray
	quad: dict = field(default_factory=dict)
	names: tuple = ()

	def __post_init__(self):
		# contiguous storage keeps the flattened views used by the envelope free
		object.__setattr__(self, "const", np.ascontiguousarray(self.const, dtype=float))
		object.__setattr__(self, "lin", np.ascontiguousarray(self.lin, dtype=float))
		object.__setattr__(self, "quad", {k: np.ascontiguousarray(v, dtype=float) for k, v in self.quad.items()})
		object.__setattr__(self, "_lin_t", np.ascontiguousarray(self.lin.transpose(0, 2, 1)))

	@property
	def K(self) -> int:
		return self.const.shape[1]

	def take(self, idx) -> "MomentSet":
		return MomentSet(self.const[idx], self.lin[idx], {k: v[idx] for k, v in self.quad.items()}, self.names)

	def combine(self, lam) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
		"""``sum_k lam_k phi_k`` as quadratic coefficients."""
		c = self.const @ lam
		g = self._lin_t @ lam
		H = None
		for k, Q in self.quad.items():
			if lam[k] != 0.0:
				H = lam[k] * Q if H is None else H + lam[k] * Q
		return c, g, H

	def evaluate(self, b) -> np.ndarray:
		"""Moment values at ``b`` with shape (n, K)."""
		out = _lin_apply(self.const, self.lin, b)
		for k, Q in self.quad.items():
			out[:, k] += np.einsum("nj,njl,nl->n", b, Q, b)
		return out


def _lin_apply(const, lin, b):
	# const + lin @ b per row; a loop over the (small) coefficient dimension
	# beats batched matmul here
	out = const.copy()
	for j in range(lin.shape[2]):
		out += lin[:, :, j] * b[:, j, None]
	return out


FREE, NEG, POS = "free", "neg", "pos"


@dataclass(frozen=True)
class DualProblemSpec:
	"""Everything needed to evaluate a bound through its dual.

	Parameters
	----------
	objective : QuadraticForm or IndicatorSplit or None
		``None`` means ``m = 0`` (used for the relaxation problem).
	moments : MomentSet
	region : SupportRegion
	domain : tuple
		Per-multiplier sign restriction: ``"free"``, ``"neg"``, ``"pos"`` or
		``("ge", value)``.
	side : {"lower", "upper"}
	weights : ndarray, shape (n,)
		Nonnegative weights summing to one.
	"""

	objective: object
	moments: MomentSet
	region: SupportRegion
	domain: tuple
	side: str
	weights: np.ndarray
	name: str = ""

	def __post_init__(self):
		if self.side not in ("lower", "upper"):
			raise ConfigError(f"unknown side {self.side!r}")
		if len(self.domain) != self.moments.K:
			raise ConfigError("one sign restriction per moment is required")
		if self.moments.K < 1:
			raise ConfigError("at least one moment function is required")
		if isinstance(self.objective, IndicatorSplit) and not self.region.bounded:
			raise ConfigError("indicator objectives need a bounded support")

	@property
	def K(self) -> int:
		return self.moments.K

	@property
	def n(self) -> int:
		return self.moments.const.shape[0]

	@property
	def d(self) -> int:
		return self.moments.lin.shape[2]

	@property
	def sense(self) -> str:
		return "min" if self.side == "lower" else "max"

	def flipped(self, side: str | None = None) -> "DualProblemSpec":
		"""Same problem for the other (or a given) side with the matching sign domain."""
		side = side or ("upper" if self.side == "lower" else "lower")
		if side == self.side:
			return self
		swap = {NEG: POS, POS: NEG}
		dom = tuple(swap.get(x, x) if isinstance(x, str) else x for x in self.domain)
		return replace(self, side=side, domain=dom)

	def with_weights(self, weights) -> "DualProblemSpec":
		w = np.asarray(weights, dtype=float)
		return replace(self, weights=w / w.sum())

	def take(self, idx) -> "DualProblemSpec":
		obj = self.objective
		if isinstance(obj, QuadraticForm):
			obj = obj.take(idx)
		w = self.weights[idx]
		return replace(self, objective=obj, moments=self.moments.take(idx), weights=w / w.sum())


@dataclass
class EnvelopeEvaluation:
	"""Outer objective at one multiplier vector.

	``subgradient`` is the weighted mean of the moment functions at the
	inner optimisers (a gradient wherever those are unique).
	"""

	value: float
	subgradient: np.ndarray
	values: np.ndarray | None = None
	b: np.ndarray | None = None


def _branch(spec, c, g, H, halfspace=None):
	return solve_box_qp(c, g, H, spec.region.lo, spec.region.hi, spec.sense, halfspace)


def _candidate_values(c, g, H, pts):
	"""Quadratic at every support point, shape (n, nB)."""
	outer = (pts[:, :, None] * pts[:, None, :]).reshape(pts.shape[0], -1)
	return c[:, None] + g @ pts.T + H.reshape(H.shape[0], -1) @ outer.T


def _soft_pick(vals, sense, tau):
	"""Hard or soft optimum over the last axis with matching weights."""
	sgn = 1.0 if sense == "min" else -1.0
	if tau > 0:
		z = -sgn * vals / tau
		zmax = z.max(axis=1, keepdims=True)
		ez = np.exp(z - zmax)
		wts = ez / ez.sum(axis=1, keepdims=True)
		return -sgn * tau * (zmax[:, 0] + np.log(ez.sum(axis=1))), wts
	pick = np.argmin(sgn * vals, axis=1)
	wts = np.zeros_like(vals)
	wts[np.arange(vals.shape[0]), pick] = 1.0
	return vals[np.arange(vals.shape[0]), pick], wts


def _discrete_pick(spec, c, g, H, tau):
	vals = _candidate_values(c, g, H, spec.region.points) + _indicator_offsets(spec)
	return _soft_pick(vals, spec.sense, tau)


def _discrete(spec, lam, c, g, H, tau):
	pts = spec.region.points
	v, wts = _discrete_pick(spec, c, g, H, tau)
	# moments are quadratic in b, so their weighted average only needs the
	# first and second moments of the weighted candidates
	bbar = wts @ pts
	ms = spec.moments
	phi = _lin_apply(ms.const, ms.lin, bbar)
	if ms.quad:
		second = wts @ (pts[:, :, None] * pts[:, None, :]).reshape(pts.shape[0], -1)
		for k, Q in ms.quad.items():
			phi[:, k] += np.sum(Q.reshape(Q.shape[0], -1) * second, axis=1)
	b = pts[np.argmax(wts, axis=1)]
	return v, phi, b


def _discrete_mean(spec, pw):
	"""``sum_{i,j} pw[i, j] phi_k(W_i, b_j)`` without per-individual moments."""
	pts = spec.region.points
	ms = spec.moments
	n, K, d = ms.lin.shape
	out = ms.const.T @ pw.sum(axis=1)
	lin = (pw.T @ ms.lin.reshape(n, K * d)).reshape(-1, K, d)
	out += np.einsum("jkd,jd->k", lin, pts)
	for k, Q in ms.quad.items():
		qj = pw.T @ Q.reshape(n, d * d)
		out[k] += np.sum(qj * (pts[:, :, None] * pts[:, None, :]).reshape(-1, d * d))
	return out


def _indicator_offsets(spec):
	obj = spec.objective
	if isinstance(obj, IndicatorSplit):
		inside = spec.region.points @ obj.a <= obj.c0
		return np.where(inside, obj.on, obj.off)[None, :]
	return 0.0


def candidate_table(spec: DualProblemSpec, idx=None):
	"""Objective and moment values at every support point.

	Returns ``m`` with shape (n, nB) and ``phi`` with shape (n, nB, K) for
	the individuals ``idx`` (all by default).  Only for finite supports.
	"""
	pts = spec.region.points
	ms = spec.moments if idx is None else spec.moments.take(idx)
	n = ms.const.shape[0]
	obj = spec.objective
	if isinstance(obj, QuadraticForm):
		o = obj if idx is None else obj.take(idx)
		m = _candidate_values(o.c, o.g, o.H, pts)
	else:
		m = np.zeros((n, pts.shape[0]))
	m = m + _indicator_offsets(spec)
	phi = ms.const[:, None, :] + np.einsum("nkd,jd->njk", ms.lin, pts)
	for k, Q in ms.quad.items():
		phi[:, :, k] += np.einsum("jd,nde,je->nj", pts, Q, pts)
	return m, phi


def inner_values(lam, spec: DualProblemSpec, tau: float = 0.0):
	"""Per-individual inner optimum and the moment values at the optimiser.

	With ``tau > 0`` the choice between the two halves of an indicator
	objective is smoothed (soft minimum or soft maximum with temperature
	``tau``) and the returned moment values are the matching convex
	combination.
	"""
	lam = np.asarray(lam, dtype=float)
	n, d = spec.n, spec.d
	c, g, H = spec.moments.combine(lam)
	if H is None:
		H = np.zeros((n, d, d))
	obj = spec.objective
	if spec.region.discrete:
		if isinstance(obj, QuadraticForm):
			c, g, H = c + obj.c, g + obj.g, H + obj.H
		return _discrete(spec, lam, c, g, H, tau)
	if obj is None or isinstance(obj, QuadraticForm):
		if obj is not None:
			c, g, H = c + obj.c, g + obj.g, H + obj.H
		b, v = _branch(spec, c, g, H)
		phi = spec.moments.evaluate(b) if np.all(np.isfinite(b)) else np.full((n, spec.K), np.nan)
		return v, phi, b
	if not isinstance(obj, IndicatorSplit):
		raise ConfigError("unsupported objective")
	branches = []
	for side, extra in (("le", obj.on), ("ge", obj.off)):
		try:
			b, v = _branch(spec, c, g, H, (obj.a, obj.c0, side))
		except EmptySideError:
			continue
		branches.append((v + extra, b))
	vals = np.stack([v for v, _ in branches], axis=1)
	sgn = 1.0 if spec.sense == "min" else -1.0
	if tau > 0 and len(branches) > 1:
		z = -sgn * vals / tau
		zmax = z.max(axis=1, keepdims=True)
		ez = np.exp(z - zmax)
		wts = ez / ez.sum(axis=1, keepdims=True)
		v = -sgn * tau * (zmax[:, 0] + np.log(ez.sum(axis=1)))
		phi = sum(wts[:, [j]] * spec.moments.evaluate(b) for j, (_, b) in enumerate(branches))
		b = branches[int(np.argmax(wts.sum(axis=0)))][1]
		return v, phi, b
	pick = np.argmin(sgn * vals, axis=1)
	b = np.where((pick == 0)[:, None], branches[0][1], branches[-1][1])
	v = vals[np.arange(n), pick]
	return v, spec.moments.evaluate(b), b


def envelope(lam, spec: DualProblemSpec, per_individual: bool = False, tau: float = 0.0) -> EnvelopeEvaluation:
	"""Weighted mean of the inner optima and its envelope gradient."""
	w = spec.weights
	if spec.region.discrete and not per_individual:
		lam = np.asarray(lam, dtype=float)
		c, g, H = spec.moments.combine(lam)
		if H is None:
			H = np.zeros((spec.n, spec.d, spec.d))
		if isinstance(spec.objective, QuadraticForm):
			c, g, H = c + spec.objective.c, g + spec.objective.g, H + spec.objective.H
		v, wts = _discrete_pick(spec, c, g, H, tau)
		return EnvelopeEvaluation(float(w @ v), _discrete_mean(spec, w[:, None] * wts))
	v, phi, b = inner_values(lam, spec, tau)
	if not np.all(np.isfinite(v)):
		bad = -np.inf if spec.side == "lower" else np.inf
		return EnvelopeEvaluation(bad, np.full(spec.K, np.nan), v if per_individual else None,
								  b if per_individual else None)
	return EnvelopeEvaluation(float(w @ v), w @ phi, v if per_individual else None, b if per_individual else None)


# --------------------------------------------------------------------------
# outer optimisation

@dataclass(frozen=True)
class OuterConfig:
	"""Settings of the outer multiplier search.

	``n_starts`` deterministic restarts are drawn around ``init`` with
	``seed``.  ``taus`` is the smoothing schedule used for indicator
	objectives before the final unsmoothed polish.  On a finite support
	(unpenalised) only ``discrete_taus`` are run, with at most
	``discrete_iter`` iterations each, and the exact row-generation
	program finishes the search.
	"""

	max_iter: int = 3000
	ftol: float = 1e-15
	gtol: float = 1e-10
	n_starts: int = 1
	seed: int = 0
	cap: float = LAMBDA_CAP
	taus: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
	on_divergence: str = "flag"
	strict_eps: float = 1e-10
	exact_discrete: bool = True
	discrete_taus: tuple = (1e-2, 1e-3)
	discrete_iter: int = 50


@dataclass
class BoundsSide:
	"""One side of a bound from the dual problem."""

	value: float
	lam: np.ndarray
	side: str
	flags: tuple = ()
	n_iter: int = 0
	n_eval: int = 0
	grad_norm: float = float("nan")
	penalty: float = 0.0

	def to_dict(self) -> dict:
		return {"side": self.side, "value": float(self.value), "lambda_norm": float(np.max(np.abs(self.lam))),
				"flags": list(self.flags), "iterations": int(self.n_iter)}


class _Param:
	"""Map optimisation variables ``x`` to multipliers with linear penalty.

	Free penalised coordinates are split into positive and negative parts so
	that the L1 penalty becomes linear in ``x``.
	"""

	def __init__(self, spec: DualProblemSpec, penalised=(), cap=LAMBDA_CAP, eps=0.0):
		K = spec.K
		penalised = set(int(k) for k in penalised)
		cols, bounds, pen, owner = [], [], [], []
		for k, dom in enumerate(spec.domain):
			if dom == FREE and k in penalised:
				for sgn in (1.0, -1.0):
					cols.append((k, sgn))
					bounds.append((0.0, cap))
					pen.append(1.0)
					owner.append(k)
				continue
			if dom == FREE:
				bnd, p = (-cap, cap), 0.0
			elif dom == NEG:
				bnd, p = (-cap, -eps), -1.0
			elif dom == POS:
				bnd, p = (eps, cap), 1.0
			elif isinstance(dom, tuple) and dom[0] == "ge":
				bnd = (float(dom[1]) + eps, cap)
				p = 1.0 if dom[1] >= 0 else None
				if k in penalised and p is None:
					raise ConfigError("cannot penalise a multiplier whose domain spans zero unless it is free")
			else:
				raise ConfigError(f"unknown sign restriction {dom!r}")
			cols.append((k, 1.0))
			bounds.append(bnd)
			pen.append(p if k in penalised else 0.0)
			owner.append(k)
		self.P = np.zeros((K, len(cols)))
		for j, (k, s) in enumerate(cols):
			self.P[k, j] = s
		self.bounds = bounds
		self.pen = np.asarray(pen, dtype=float)
		self.owner = np.asarray(owner)

	def to_x(self, lam):
		x = np.zeros(self.P.shape[1])
		for k in range(self.P.shape[0]):
			js = np.flatnonzero(self.owner == k)
			if len(js) == 2:
				x[js[0]], x[js[1]] = max(lam[k], 0.0), max(-lam[k], 0.0)
			else:
				x[js[0]] = lam[k]
		lo = np.array([b[0] for b in self.bounds])
		hi = np.array([b[1] for b in self.bounds])
		return np.clip(x, lo, hi)

	def to_lam(self, x):
		return self.P @ x


def _default_init(spec: DualProblemSpec) -> np.ndarray:
	lam = np.zeros(spec.K)
	for k, dom in enumerate(spec.domain):
		if dom == NEG:
			lam[k] = -1.0
		elif dom == POS:
			lam[k] = 1.0
		elif isinstance(dom, tuple):
			lam[k] = max(float(dom[1]) * 1.5, float(dom[1]) + 1.0) if dom[1] > 0 else 1.0
	return lam


def _minimize(fun, x0, bounds, cfg: OuterConfig):
	return optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
							 options={"maxiter": cfg.max_iter, "maxfun": 4 * cfg.max_iter, "ftol": cfg.ftol,
									  "gtol": cfg.gtol, "maxcor": 30})


def _run(spec: DualProblemSpec, init, cfg: OuterConfig, zeta: float = 0.0, penalised=()):
	"""Core search shared by the plain and penalised problems."""
	eps = 0.0 if spec.region.bounded else cfg.strict_eps
	par = _Param(spec, penalised, cfg.cap, eps)
	sgn = -1.0 if spec.side == "lower" else 1.0  # minimise sgn * value
	smooth = isinstance(spec.objective, IndicatorSplit) or spec.region.discrete
	exact = spec.region.discrete and cfg.exact_discrete and not len(penalised)
	if exact:
		cfg = replace(cfg, taus=cfg.discrete_taus, max_iter=cfg.discrete_iter)
	counter = {"n": 0}

	def make(tau):
		def fun(x):
			counter["n"] += 1
			ev = envelope(par.to_lam(x), spec, tau=tau)
			if not np.isfinite(ev.value):
				return 1e300, np.zeros_like(x)
			f = sgn * ev.value + zeta * (par.pen @ x)
			gr = sgn * (par.P.T @ ev.subgradient) + zeta * par.pen
			return f, gr
		return fun

	rng = np.random.default_rng(cfg.seed)
	init = _default_init(spec) if init is None else np.asarray(init, dtype=float)
	starts = [init]
	for _ in range(cfg.n_starts - 1):
		starts.append(init + rng.normal(scale=0.5 * (1.0 + np.abs(init))))
	best = None
	for lam0 in starts:
		x = par.to_x(lam0)
		n_iter = 0
		status_flags = []
		for tau in (cfg.taus if smooth else ()):
			res = _minimize(make(tau), x, par.bounds, cfg)
			x, n_iter = res.x, n_iter + res.nit
		if exact:
			lam_x, _, info = discrete_polish(spec, par.to_lam(x), cfg.cap)
			x = par.to_x(lam_x)
			f, gr = make(0.0)(x)
			if best is None or f < best[0]:
				best = (f, x, gr, n_iter + info["rounds"], status_flags)
			continue
		res = _minimize(make(0.0), x, par.bounds, cfg)
		n_iter += res.nit
		if res.status == 1:
			status_flags.append("max_iterations")
		f, gr = make(0.0)(res.x)
		if smooth:
			# the unsmoothed problem is nonsmooth; keep the better of the two iterates
			fx, _ = make(0.0)(x)
			if fx < f:
				f, gr, res_x = fx, make(0.0)(x)[1], x
			else:
				res_x = res.x
		else:
			res_x = res.x
		if best is None or f < best[0]:
			best = (f, res_x, gr, n_iter, status_flags)
	f, x, gr, n_iter, flags = best
	lam = par.to_lam(x)
	ev = envelope(lam, spec)
	# projected gradient norm (zero components pushing against active bounds)
	lo = np.array([b[0] for b in par.bounds])
	hi = np.array([b[1] for b in par.bounds])
	pg = np.where(((x <= lo + 1e-12) & (gr > 0)) | ((x >= hi - 1e-12) & (gr < 0)), 0.0, gr)
	flags = list(flags)
	if np.max(np.abs(lam), initial=0.0) >= 0.999 * cfg.cap:
		flags.append("diverging")
		if cfg.on_divergence == "raise":
			raise DivergingMultiplierError("multipliers reached the divergence cap", cap=cfg.cap)
	pen = float(np.sum(np.abs(lam[list(penalised)]))) if len(penalised) else 0.0
	return BoundsSide(value=ev.value, lam=lam, side=spec.side, flags=tuple(flags), n_iter=n_iter,
					  n_eval=counter["n"], grad_norm=float(np.linalg.norm(pg)), penalty=pen)


def discrete_polish(spec: DualProblemSpec, lam0, cap: float = LAMBDA_CAP, init_tol: float = 1e-3,
					max_rounds: int = 200):
	"""Exact dual optimum for a finite coefficient support by row generation.

	The dual is a linear program in ``(lambda, u)`` with one constraint per
	individual and support point.  Starting from the near-optimal
	``lam0``, only individuals whose best candidates are nearly tied keep
	explicit constraints; every other individual contributes the single
	affine piece that is active around ``lam0``.  The restricted program
	over-estimates the dual, so when every individual's optimum at its
	solution lies among the retained candidates the solution is optimal.

	Returns
	-------
	lam : ndarray
	value : float
	info : dict
	"""
	sgn = 1.0 if spec.side == "lower" else -1.0
	p = spec.weights
	n, K = spec.n, spec.K
	pts = spec.region.points
	nB = pts.shape[0]
	lam = np.asarray(lam0, dtype=float)

	def scored(lam):
		c, g, H = spec.moments.combine(lam)
		if H is None:
			H = np.zeros((n, spec.d, spec.d))
		if isinstance(spec.objective, QuadraticForm):
			c, g, H = c + spec.objective.c, g + spec.objective.g, H + spec.objective.H
		return sgn * (_candidate_values(c, g, H, pts) + _indicator_offsets(spec))

	vals = scored(lam)
	vmin = vals.min(axis=1)
	J = vals <= (vmin + init_tol * (1.0 + np.abs(vmin)))[:, None]
	bounds = []
	for dom in spec.domain:
		if dom == FREE:
			bounds.append((-cap, cap))
		elif dom == NEG:
			bounds.append((-cap, 0.0))
		elif dom == POS:
			bounds.append((0.0, cap))
		else:
			bounds.append((float(dom[1]), cap))
	info = {"rounds": 0}
	for rnd in range(max_rounds):
		multi = np.flatnonzero(J.sum(axis=1) > 1)
		single = np.flatnonzero(J.sum(axis=1) == 1)
		# aggregated affine part from single-candidate individuals
		js = np.argmax(J[single], axis=1)
		const = 0.0
		lin = np.zeros(K)
		if single.size:
			m_s, phi_s = _table_rows(spec, single, js)
			const = float(p[single] @ (sgn * m_s))
			lin = p[single] @ (sgn * phi_s)
		m_m, phi_m = candidate_table(spec, multi) if multi.size else (np.zeros((0, nB)), np.zeros((0, nB, K)))
		rows_w, rows_j = np.nonzero(J[multi])
		nU = multi.size
		nr = rows_w.size
		A = sparse.hstack([sparse.csr_matrix(-sgn * phi_m[rows_w, rows_j]),
						   sparse.csr_matrix((np.ones(nr), (np.arange(nr), rows_w)), shape=(nr, nU))], format="csr")
		ub = sgn * m_m[rows_w, rows_j]
		cvec = -np.concatenate([lin, p[multi]])
		res = optimize.linprog(cvec, A_ub=A if rows_w.size else None, b_ub=ub if rows_w.size else None,
					  bounds=bounds + [(None, None)] * nU, method="highs")
		if res.status != 0:
			info["status"] = res.message
			break
		lam_new = res.x[:K]
		master = const - res.fun
		vals = scored(lam_new)
		best = vals.min(axis=1)
		arg = np.argmin(vals, axis=1)
		cur = np.where(J, vals, np.inf).min(axis=1)
		viol = best < cur - 1e-11 * (1.0 + np.abs(best))
		lam = lam_new
		info.update(rounds=rnd + 1, master=sgn * master, added=int(viol.sum()))
		if not viol.any():
			break
		J[np.flatnonzero(viol), arg[viol]] = True
	value = sgn * float(p @ scored(lam).min(axis=1))
	info["gap"] = abs(info.get("master", value) - value)
	return lam, value, info


def _table_rows(spec, idx, js):
	"""Objective and moments at one chosen support point per individual."""
	pts = spec.region.points
	b = pts[js]
	sub = spec.take(idx)
	obj = sub.objective
	if isinstance(obj, QuadraticForm):
		m = quad_value(obj.c, obj.g, obj.H, b)
	else:
		m = np.zeros(idx.size)
	off = _indicator_offsets(spec)
	if not np.isscalar(off):
		m = m + off[0, js]
	return m, sub.moments.evaluate(b)


def outer_optimize(spec: DualProblemSpec, init=None, config: OuterConfig | None = None) -> BoundsSide:
	"""Optimise the dual over the multipliers.

	Returns the bound value (the unpenalised envelope at the optimiser) and
	the optimal multipliers.  Flags record hitting the iteration limit or
	the divergence cap.
	"""
	return _run(spec, init, config or OuterConfig())


def penalized_outer_optimize(spec: DualProblemSpec, zeta: float, penalised, init=None,
							 config: OuterConfig | None = None) -> BoundsSide:
	"""Dual with an L1 penalty ``zeta * sum_{k in penalised} |lambda_k|``.

	The returned ``value`` is the penalised objective, i.e. the bound under
	moments relaxed to ``|E phi_k| <= zeta``.
	"""
	if zeta < 0:
		raise ConfigError("penalty must be nonnegative")
	penalised = sorted(set(int(k) for k in penalised))
	out = _run(spec, init, config or OuterConfig(), zeta, penalised)
	sgn = -1.0 if spec.side == "lower" else 1.0
	out.value = out.value + sgn * zeta * out.penalty
	return out


def min_relaxation(spec: DualProblemSpec, penalised, config: OuterConfig | None = None,
				   return_multiplier: bool = False):
	"""Smallest uniform relaxation of the penalised moments that is feasible.

	Solves ``max E min_b sum_k lambda_k phi_k`` over ``sum_{penalised}
	|lambda_k| <= 1`` (the objective of ``spec`` is ignored).  With no
	penalised moment the result is 0 when the equalities are compatible;
	otherwise :class:`InfeasibleRelaxationError` is raised.
	"""
	cfg = config or OuterConfig()
	base = replace(spec.flipped("lower") if spec.side == "upper" else spec, objective=None)
	penalised = sorted(set(int(k) for k in penalised))
	if not penalised:
		out = _run(base, np.zeros(base.K) if base.region.bounded else None, replace(cfg, cap=1e3))
		if out.value > 1e-8:
			raise InfeasibleRelaxationError("moment equalities cannot hold jointly", value=out.value)
		return (0.0, out.lam) if return_multiplier else 0.0
	eps = 0.0 if base.region.bounded else cfg.strict_eps
	par = _Param(base, penalised, cfg.cap, eps)
	bounds = []
	for j, (lo, hi) in enumerate(par.bounds):
		if par.pen[j] > 0:
			hi = min(hi, 1.0)
		elif par.pen[j] < 0:
			lo = max(lo, -1.0)
		bounds.append((lo, hi))

	def fun(x):
		ev = envelope(par.to_lam(x), base)
		if not np.isfinite(ev.value):
			return 1e300, np.zeros_like(x)
		return -ev.value, -(par.P.T @ ev.subgradient)

	x0 = np.clip(par.to_x(_default_init(base)) * 0.5 / max(1, len(penalised)),
				 [b[0] for b in bounds], [b[1] for b in bounds])
	if len(par.pen[par.pen != 0]) == 1:
		res = _minimize(fun, x0, bounds, cfg)
		x = res.x
	else:
		cons = [{"type": "ineq", "fun": lambda x: 1.0 - par.pen @ x, "jac": lambda x: -par.pen}]
		res = optimize.minimize(fun, x0, jac=True, method="SLSQP", bounds=bounds, constraints=cons,
								options={"maxiter": cfg.max_iter, "ftol": 1e-14})
		x = res.x
	lam = par.to_lam(x)
	val = max(envelope(lam, base).value, 0.0)
	return (val, lam) if return_multiplier else val
