"""Equality-form linear programs with nonnegative variables.

Two interchangeable back ends solve ``min/max c'x  s.t.  Ax = b, x >= 0``:
SciPy's HiGHS interface (default, fast on the large sparse programs of the
population oracle) and a dense two-phase revised simplex with Bland's rule.
Both return primal and dual solutions and the duality gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, sparse

from ..errors import ConfigError, InfeasibleError, IterationLimitError, UnboundedError


@dataclass(frozen=True)
class LPProblem:
	"""``sense c'x`` subject to ``A_eq x = b_eq`` and ``x >= 0``."""

	c: np.ndarray
	A_eq: object
	b_eq: np.ndarray
	sense: str = "min"

	def __post_init__(self):
		if self.sense not in ("min", "max"):
			raise ConfigError(f"unknown sense {self.sense!r}")
		m, n = self.A_eq.shape
		if np.shape(self.c) != (n,) or np.shape(self.b_eq) != (m,):
			raise ConfigError("inconsistent LP dimensions")

	@property
	def shape(self):
		return self.A_eq.shape


@dataclass
class LPResult:
	status: str
	value: float
	x: np.ndarray
	duals: np.ndarray
	gap: float
	iterations: int
	backend: str


def presolve(problem: LPProblem):
	"""Drop all-zero rows; an all-zero row with nonzero right side is infeasible."""
	A = sparse.csr_matrix(problem.A_eq)
	nnz = np.diff(A.indptr) > 0
	if not nnz.all():
		rhs = np.asarray(problem.b_eq)[~nnz]
		if np.any(np.abs(rhs) > 1e-12):
			raise InfeasibleError("zero constraint row with nonzero right-hand side")
	return A[nnz], np.asarray(problem.b_eq, dtype=float)[nnz], nnz


def lp_solve(problem: LPProblem, backend: str = "highs", max_iter: int = 100000, tol: float = 1e-9) -> LPResult:
	"""Solve an equality-form LP.

	Returns
	-------
	LPResult
		``duals`` are the equality multipliers ``y`` with ``c'x = b'y`` at
		the optimum (for the stated sense); zero for dropped rows.

	Raises
	------
	InfeasibleError, UnboundedError, IterationLimitError
	"""
	A, b, kept = presolve(problem)
	sgn = 1.0 if problem.sense == "min" else -1.0
	c = sgn * np.asarray(problem.c, dtype=float)
	if backend == "highs":
		res = optimize.linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs",
							   options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
		if res.status == 2:
			raise InfeasibleError("linear program is infeasible")
		if res.status == 3:
			raise UnboundedError("linear program is unbounded")
		if res.status == 1:
			raise IterationLimitError("iteration limit reached")
		if res.status != 0:
			raise InfeasibleError(f"solver failure: {res.message}")
		x, y, nit = res.x, res.eqlin.marginals, int(res.nit)
	elif backend == "simplex":
		x, y, nit = revised_simplex(A.toarray(), b, c, max_iter=max_iter, tol=tol)
	else:
		raise ConfigError(f"unknown backend {backend!r}")
	duals = np.zeros(len(kept))
	duals[kept] = sgn * y
	value = float(np.asarray(problem.c, dtype=float) @ x)
	gap = abs(value - float(np.asarray(problem.b_eq, dtype=float) @ duals))
	return LPResult("optimal", value, x, duals, gap, nit, backend)


def revised_simplex(A, b, c, max_iter: int = 100000, tol: float = 1e-9):
	"""Dense two-phase revised simplex for ``min c'x, Ax = b, x >= 0``.

	Bland's smallest-index rule prevents cycling.  Rows found redundant in
	phase one are removed (their dual is zero).

	Returns
	-------
	x, y, iterations
	"""
	A = np.array(A, dtype=float)
	b = np.array(b, dtype=float)
	c = np.asarray(c, dtype=float)
	m, n = A.shape
	flip = b < 0
	A[flip] *= -1.0
	b[flip] *= -1.0
	# phase one on [A I]
	Aa = np.hstack([A, np.eye(m)])
	ca = np.concatenate([np.zeros(n), np.ones(m)])
	basis = list(range(n, n + m))
	rows = np.arange(m)
	basis, it1 = _simplex_loop(Aa, b, ca, basis, max_iter, tol)
	xb = linalg.solve(Aa[:, basis], b)
	if ca[basis] @ xb > tol * max(1.0, np.abs(b).max(initial=0.0)) * 10:
		raise InfeasibleError("linear program is infeasible")
	# drive artificial variables out of the basis
	keep_rows = np.ones(m, dtype=bool)
	for pos in range(m):
		j = basis[pos]
		if j < n:
			continue
		binv_row = linalg.solve(Aa[:, basis].T, np.eye(m)[pos])
		alpha = binv_row @ A
		cand = [k for k in range(n) if abs(alpha[k]) > 1e-9 and k not in basis]
		if cand:
			basis[pos] = cand[0]
		else:
			keep_rows[pos] = False
	# remove redundant rows (identified by artificials that could not leave)
	red = [basis[p] - n for p in range(m) if not keep_rows[p]]
	if red:
		mask = np.ones(m, dtype=bool)
		mask[red] = False
		A, b, rows = A[mask], b[mask], rows[mask]
		basis = [j for p, j in enumerate(basis) if keep_rows[p]]
	basis, it2 = _simplex_loop(A, b, c, basis, max_iter - it1, tol)
	B = A[:, basis]
	xb = linalg.solve(B, b)
	x = np.zeros(n)
	x[basis] = np.maximum(xb, 0.0)
	yk = linalg.solve(B.T, c[basis])
	y = np.zeros(m)
	y[rows] = yk
	y[flip] *= -1.0
	return x, y, it1 + it2


def _simplex_loop(A, b, c, basis, max_iter, tol):
	m, n = A.shape
	basis = list(basis)
	for it in range(max_iter):
		lu = linalg.lu_factor(A[:, basis])
		xb = linalg.lu_solve(lu, b)
		y = linalg.lu_solve(lu, c[basis], trans=1)
		d = c - A.T @ y
		d[basis] = 0.0
		scale = 1.0 + np.abs(c).max(initial=0.0)
		enter = np.flatnonzero(d < -tol * scale)
		if enter.size == 0:
			return basis, it
		j = int(enter[0])
		u = linalg.lu_solve(lu, A[:, j])
		pos = np.flatnonzero(u > tol)
		if pos.size == 0:
			raise UnboundedError("linear program is unbounded")
		ratios = np.maximum(xb[pos], 0.0) / u[pos]
		rmin = ratios.min()
		ties = pos[ratios <= rmin + 1e-12 * (1.0 + rmin)]
		leave = min(ties, key=lambda p: basis[p])
		basis[leave] = j
	raise IterationLimitError("simplex iteration limit reached")
