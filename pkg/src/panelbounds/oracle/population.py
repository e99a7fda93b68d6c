"""Exact enumeration of finite-support populations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dgp import DiscreteDGP, discrete_panel
from ..errors import EnumerationLimitError
from ..panel import PanelDataset

ATOM_LIMIT = 10 ** 7


@dataclass(frozen=True)
class PopulationDistribution:
	"""Joint law of observables and coefficients on a finite support.

	Attributes
	----------
	y, x : ndarray, shape (A, T)
		Trajectory of each atom.
	b : ndarray, shape (A, d)
		Coefficients of each atom.
	prob : ndarray, shape (A,)
	w_index : ndarray, shape (A,)
		Index of the atom's observable trajectory among the distinct ones.
	wy, wx : ndarray, shape (nW, T)
		Distinct observable trajectories.
	pw : ndarray, shape (nW,)
		Their probabilities.
	"""

	y: np.ndarray
	x: np.ndarray
	b: np.ndarray
	prob: np.ndarray
	w_index: np.ndarray
	wy: np.ndarray
	wx: np.ndarray
	pw: np.ndarray
	n_raw: int

	@property
	def T(self) -> int:
		return self.y.shape[1]

	@property
	def n_atoms(self) -> int:
		return self.prob.size

	def expect(self, values) -> float:
		"""Population mean of per-atom values."""
		return float(self.prob @ np.asarray(values, dtype=float))

	def to_panel(self) -> PanelDataset:
		"""Observable law as a weighted panel (one row per distinct trajectory)."""
		return discrete_panel(self.wy, self.wx, self.pw)

	def atom_panel(self) -> PanelDataset:
		"""Atoms as a weighted panel; ``meta['coefficients']`` holds ``b``."""
		data = discrete_panel(self.y, self.x, self.prob)
		data.meta["coefficients"] = self.b
		return data


def _unique_rows(arr, decimals=12):
	key = np.round(arr, decimals)
	_, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
	return first, inv.ravel()


def enumerate_population(dgp: DiscreteDGP, T: int, merge: bool = True) -> PopulationDistribution:
	"""Forward enumeration over intercept, slope and every shock path.

	Parameters
	----------
	dgp : DiscreteDGP
	T : int
	merge : bool
		Merge atoms with identical trajectory and coefficients.

	Raises
	------
	EnumerationLimitError
		When the raw atom count exceeds ``ATOM_LIMIT``.
	"""
	gs = np.asarray(dgp.gamma_support, dtype=float)
	bs = np.asarray(dgp.beta_support, dtype=float)
	es = np.asarray(dgp.eps_support, dtype=float)
	n_raw = len(gs) * len(bs) * len(es) ** T
	if n_raw > ATOM_LIMIT:
		raise EnumerationLimitError(f"{n_raw} atoms exceed the limit {ATOM_LIMIT}", atoms=n_raw)
	grids = np.indices((len(gs), len(bs)) + (len(es),) * T).reshape(2 + T, -1)
	gi, bi, ei = grids[0], grids[1], grids[2:].T
	prob = dgp.pg[gi] * dgp.pb[bi] * np.prod(dgp.pe[ei], axis=1)
	gamma, beta = gs[gi], bs[bi]
	y, x = dgp.simulate(gamma, beta, es[ei])
	b = np.column_stack([gamma, beta])
	keep = prob > 0
	y, x, b, prob = y[keep], x[keep], b[keep], prob[keep]
	if merge:
		first, inv = _unique_rows(np.hstack([y, x, b]))
		prob = np.bincount(inv, weights=prob)
		y, x, b = y[first], x[first], b[first]
	wfirst, widx = _unique_rows(np.hstack([y, x]))
	pw = np.bincount(widx, weights=prob)
	return PopulationDistribution(y, x, b, prob, widx, y[wfirst], x[wfirst], pw, n_raw)
