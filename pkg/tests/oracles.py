"""Independent reference implementations used as test oracles."""

import numpy as np


def tableau_simplex(A, b, c, tol=1e-10, max_iter=10_000):
	"""Dense two-phase tableau simplex for ``min c'x, Ax = b, x >= 0``.

	Bland's rule throughout.  Returns ``(status, value, x)`` with status
	``"optimal"``, ``"infeasible"`` or ``"unbounded"``.
	"""
	A = np.array(A, dtype=float)
	b = np.array(b, dtype=float)
	c = np.asarray(c, dtype=float)
	m, n = A.shape
	neg = b < 0
	A[neg] *= -1
	b[neg] *= -1
	# columns: x (n), artificials (m), rhs
	T = np.zeros((m + 1, n + m + 1))
	T[:m, :n] = A
	T[:m, n:n + m] = np.eye(m)
	T[:m, -1] = b
	basis = list(range(n, n + m))

	def pivot(r, j):
		T[r] /= T[r, j]
		for i in range(m + 1):
			if i != r and T[i, j] != 0:
				T[i] -= T[i, j] * T[r]
		basis[r] = j

	def run(allowed):
		for _ in range(max_iter):
			red = T[-1, :-1]
			enter = [j for j in allowed if red[j] < -tol]
			if not enter:
				return "optimal"
			j = enter[0]
			col = T[:m, j]
			rows = [i for i in range(m) if col[i] > tol]
			if not rows:
				return "unbounded"
			ratios = [T[i, -1] / col[i] for i in rows]
			rmin = min(ratios)
			ties = [i for i, q in zip(rows, ratios) if q <= rmin + tol]
			pivot(min(ties, key=lambda i: basis[i]), j)
		raise RuntimeError("tableau simplex iteration limit")

	# phase one: minimise the sum of artificials
	T[-1, :] = 0.0
	T[-1, n:n + m] = 1.0
	for i in range(m):
		T[-1] -= T[i]
	run(range(n + m))
	if -T[-1, -1] > 1e-8 * max(1.0, np.abs(b).max(initial=0.0)):
		return "infeasible", np.nan, None
	# pivot remaining artificials out where possible
	for i in range(m):
		if basis[i] >= n:
			nz = [j for j in range(n) if abs(T[i, j]) > tol]
			if nz:
				pivot(i, nz[0])
	# phase two
	T[-1, :] = 0.0
	T[-1, :n] = c
	for i in range(m):
		if basis[i] < n:
			T[-1] -= c[basis[i]] * T[i]
	status = run(range(n))
	if status == "unbounded":
		return status, -np.inf, None
	x = np.zeros(n + m)
	for i in range(m):
		x[basis[i]] = T[i, -1]
	return "optimal", float(c @ x[:n]), x[:n]


def random_feasible_lp(rng, m=50, n=120):
	"""Bounded feasible program: a known feasible point and a dual-feasible cost."""
	A = rng.standard_normal((m, n))
	x0 = rng.uniform(0, 1, n) * (rng.uniform(size=n) < 0.6)
	b = A @ x0
	y = rng.standard_normal(m)
	c = A.T @ y + rng.uniform(0.1, 1.0, n)
	return A, b, c


def grid_box_qp(c, g, H, lo, hi, sense, step=1e-3):
	"""Dense grid optimum of ``c + g'b + b'Hb`` over a 2-d box."""
	u = np.linspace(lo[0], hi[0], int(round((hi[0] - lo[0]) / step)) + 1)
	v = np.linspace(lo[1], hi[1], int(round((hi[1] - lo[1]) / step)) + 1)
	U, V = np.meshgrid(u, v, indexing="ij")
	val = c + g[0] * U + g[1] * V + H[0, 0] * U * U + 2 * H[0, 1] * U * V + H[1, 1] * V * V
	return val.min() if sense == "min" else val.max()
