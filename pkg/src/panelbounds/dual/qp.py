"""Exact small-dimensional quadratic programs over boxes, batched.

Each problem is ``optimise c + g'b + b'Hb`` over ``lo <= b <= hi``,
optionally intersected with a halfspace ``a'b <= c0`` (or ``>=``).  The
solver enumerates every face of the feasible polytope, solves the
stationarity system restricted to the face and keeps the best feasible
candidate.  Because a global optimum always lies in the relative interior
of some face and is stationary there, the enumeration is exact whatever
the curvature of ``H``.  The cost grows like ``3**d`` so it is meant for
``d <= 4``; larger convex problems fall back to L-BFGS-B per problem.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import optimize

from ..errors import ConfigError, EmptySideError

ENUM_MAX_DIM = 4
_FEAS_TOL = 1e-9


def quad_value(c, g, H, b):
	"""Evaluate ``c + g'b + b'Hb`` row-wise."""
	return c + np.einsum("nj,nj->n", g, b) + np.einsum("nj,njk,nk->n", b, H, b)


def _lex_less(a, b, tol=1e-12):
	less = np.zeros(a.shape[0], dtype=bool)
	eq = np.ones(a.shape[0], dtype=bool)
	for j in range(a.shape[1]):
		less |= eq & (a[:, j] < b[:, j] - tol)
		eq &= np.abs(a[:, j] - b[:, j]) <= tol
	return less


def _solve_batch(mat, rhs):
	"""Solve square systems, flagging numerically singular ones."""
	n, k, _ = mat.shape
	if k == 1:
		den = mat[:, 0, 0]
		scale = np.abs(rhs[:, 0]) + 1.0
		ok = np.abs(den) > 1e-13 * np.maximum(np.abs(den), 1.0)
		x = np.where(ok, rhs[:, 0] / np.where(ok, den, 1.0), 0.0)[:, None]
		return x, ok & np.isfinite(x[:, 0]) & (np.abs(x[:, 0]) < 1e300 / scale)
	det = np.linalg.det(mat)
	rown = np.prod(np.linalg.norm(mat, axis=2), axis=1)
	ok = np.abs(det) > 1e-12 * np.maximum(rown, 1e-300)
	safe = np.where(ok[:, None, None], mat, np.eye(k))
	x = np.linalg.solve(safe, rhs[:, :, None])[:, :, 0]
	return x, ok


def _unbounded(c, g, H, sense):
	n, d = g.shape
	sgn = 1.0 if sense == "min" else -1.0
	Hs = sgn * H
	ev = np.linalg.eigvalsh(Hs)
	ok = ev[:, 0] > 1e-12 * np.maximum(np.abs(ev[:, -1]), 1e-300)
	safe = np.where(ok[:, None, None], Hs, np.eye(d))
	b = -0.5 * np.linalg.solve(safe, (sgn * g)[:, :, None])[:, :, 0]
	val = quad_value(c, g, H, b)
	val = np.where(ok, val, -np.inf if sense == "min" else np.inf)
	b[~ok] = np.nan
	return b, val


def solve_box_qp(c, g, H, lo=None, hi=None, sense: str = "min", halfspace=None):
	"""Globally optimise a batch of quadratics over a box.

	Parameters
	----------
	c : ndarray, shape (n,)
	g : ndarray, shape (n, d)
	H : ndarray, shape (n, d, d)
		Symmetric.
	lo, hi : array_like, shape (d,), optional
		Box bounds.  When both are None the problem is unconstrained and is
		finite only for definite ``H`` (otherwise ``-inf``/``+inf``).
	sense : {"min", "max"}
	halfspace : tuple (a, c0, side), optional
		Extra constraint ``a'b <= c0`` (side ``"le"``) or ``a'b >= c0``
		(side ``"ge"``).

	Returns
	-------
	b : ndarray, shape (n, d)
		Optimiser (lexicographically smallest among ties).
	value : ndarray, shape (n,)
	"""
	c = np.asarray(c, dtype=float)
	g = np.asarray(g, dtype=float)
	H = np.asarray(H, dtype=float)
	n, d = g.shape
	if sense not in ("min", "max"):
		raise ConfigError(f"unknown sense {sense!r}")
	if lo is None and hi is None:
		if halfspace is not None:
			raise ConfigError("halfspace constraints require a bounded box")
		return _unbounded(c, g, H, sense)
	lo = np.asarray(lo, dtype=float)
	hi = np.asarray(hi, dtype=float)
	if lo.shape != (d,) or hi.shape != (d,) or np.any(lo > hi) or not np.all(np.isfinite(lo + hi)):
		raise ConfigError("box bounds must be finite with lo <= hi")
	if halfspace is not None:
		a, c0, side = halfspace
		a = np.asarray(a, dtype=float)
		reach = (np.sum(np.minimum(a * lo, a * hi)), np.sum(np.maximum(a * lo, a * hi)))
		if (side == "le" and reach[0] > c0 + _FEAS_TOL) or (side == "ge" and reach[1] < c0 - _FEAS_TOL):
			raise EmptySideError("box lies entirely outside the halfspace", side=side, threshold=c0)
	if d > ENUM_MAX_DIM:
		return _fallback(c, g, H, lo, hi, sense, halfspace)
	sgn = 1.0 if sense == "min" else -1.0
	gs, Hs = sgn * g, sgn * H
	width = hi - lo
	best_b = np.zeros((n, d))
	best_v = np.full(n, np.inf)
	found = np.zeros(n, dtype=bool)
	hs_states = (False, True) if halfspace is not None else (False,)
	for pattern in itertools.product((0, 1, 2), repeat=d):
		free = [j for j in range(d) if pattern[j] == 0]
		fixed = [j for j in range(d) if pattern[j] != 0]
		vfix = np.array([lo[j] if pattern[j] == 1 else hi[j] for j in fixed])
		for active in hs_states:
			k = len(free)
			if k == 0 and active:
				continue
			b = np.empty((n, d))
			if fixed:
				b[:, fixed] = vfix
			ok = np.ones(n, dtype=bool)
			if k:
				rhs = -gs[:, free]
				if fixed:
					rhs = rhs - 2.0 * np.einsum("nij,j->ni", Hs[:, free][:, :, fixed], vfix)
				mat = 2.0 * Hs[:, free][:, :, free]
				if active:
					av = a[free]
					if not np.any(av != 0):
						continue
					big = np.zeros((n, k + 1, k + 1))
					big[:, :k, :k] = mat
					big[:, :k, k] = av
					big[:, k, :k] = av
					rr = np.concatenate([rhs, np.full((n, 1), c0 - (a[fixed] @ vfix if fixed else 0.0))], axis=1)
					x, ok = _solve_batch(big, rr)
					x = x[:, :k]
				else:
					x, ok = _solve_batch(mat, rhs)
				tol = _FEAS_TOL * (1.0 + width[free])
				ok &= np.all((x >= lo[free] - tol) & (x <= hi[free] + tol), axis=1)
				b[:, free] = np.clip(x, lo[free], hi[free])
			if halfspace is not None:
				ab = b @ a
				if side == "le":
					ok &= ab <= c0 + _FEAS_TOL * (1.0 + abs(c0))
				else:
					ok &= ab >= c0 - _FEAS_TOL * (1.0 + abs(c0))
			if not ok.any():
				continue
			v = quad_value(sgn * c, gs, Hs, b)
			tie = 1e-12 * (1.0 + np.abs(np.where(found, best_v, 0.0)))
			close = found & (np.abs(v - best_v) <= tie)
			better = ok & (~found | (v < best_v - tie) | (close & _lex_less(b, best_b)))
			best_v = np.where(better, v, best_v)
			best_b[better] = b[better]
			found |= ok
	if not found.all():
		raise EmptySideError("no feasible point found")
	return best_b, sgn * best_v


def _fallback(c, g, H, lo, hi, sense, halfspace):
	if halfspace is not None:
		raise ConfigError(f"halfspace-split problems are limited to dimension {ENUM_MAX_DIM}")
	sgn = 1.0 if sense == "min" else -1.0
	ev = np.linalg.eigvalsh(sgn * H)
	if np.any(ev[:, 0] < -1e-12 * np.maximum(np.abs(ev[:, -1]), 1.0)):
		raise ConfigError(f"nonconvex inner problems are limited to dimension {ENUM_MAX_DIM}")
	n, d = g.shape
	b = np.empty((n, d))
	val = np.empty(n)
	bounds = list(zip(lo, hi))
	for i in range(n):
		Hi, gi = sgn * H[i], sgn * g[i]
		res = optimize.minimize(lambda x: gi @ x + x @ Hi @ x, np.clip(np.zeros(d), lo, hi),
								jac=lambda x: gi + 2.0 * Hi @ x, method="L-BFGS-B", bounds=bounds,
								options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000})
		b[i] = res.x
		val[i] = c[i] + g[i] @ res.x + res.x @ H[i] @ res.x
	return b, val


def solve_one(c, g, H, lo=None, hi=None, sense="min", halfspace=None):
	"""Single-problem convenience wrapper returning ``(b, value)``."""
	g = np.atleast_1d(np.asarray(g, dtype=float))
	H = np.atleast_2d(np.asarray(H, dtype=float))
	lo = None if lo is None else np.atleast_1d(lo)
	hi = None if hi is None else np.atleast_1d(hi)
	b, v = solve_box_qp(np.array([float(c)]), g[None], H[None], lo, hi, sense, halfspace)
	return b[0], float(v[0])
