"""Balanced panel data model, ingestion and pooled moment computations.

The module stores a panel of ``N`` individuals observed over ``T`` periods
as dense arrays.  Everything downstream (closed-form bounds, dual problems,
bootstrap) consumes either the arrays themselves or a :class:`MomentSummary`
of weighted averages over individuals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
	BalanceError,
	ConfigError,
	DuplicateError,
	ParseError,
	RankDeficiencyError,
	SingularDesignError,
)

GRAM_TOL = 1e-10


@dataclass(frozen=True)
class PanelDataset:
	"""Balanced panel.

	Parameters
	----------
	y : ndarray, shape (n, t)
		Outcomes.
	r : ndarray, shape (n, t, d)
		Regressors with individual-specific coefficients.
	m : ndarray, shape (n, t, dm), optional
		Regressors with common coefficients.
	weights : ndarray, shape (n,), optional
		Probability weights.  ``None`` means equal weights.  Weighted panels
		represent exact finite-support populations.
	series : dict of str to ndarray, optional
		Raw observed series with shape ``(n, t + n_init)``.  Instruments are
		built from these.
	n_init : int
		Number of leading raw periods consumed as initial conditions.
	"""

	y: np.ndarray
	r: np.ndarray
	m: np.ndarray | None = None
	weights: np.ndarray | None = None
	series: dict = field(default_factory=dict)
	n_init: int = 0
	ids: np.ndarray | None = None
	periods: np.ndarray | None = None
	r_names: tuple = ()
	m_names: tuple = ()
	meta: dict = field(default_factory=dict)

	def __post_init__(self):
		y = np.ascontiguousarray(self.y, dtype=float)
		r = np.ascontiguousarray(self.r, dtype=float)
		if y.ndim != 2:
			raise ConfigError("y must have shape (n, t)")
		if r.ndim == 2:
			r = r[:, :, None]
		if r.shape[:2] != y.shape:
			raise ConfigError("r must have shape (n, t, d)", y=y.shape, r=r.shape)
		object.__setattr__(self, "y", y)
		object.__setattr__(self, "r", r)
		if self.m is not None:
			m = np.ascontiguousarray(self.m, dtype=float)
			if m.ndim == 2:
				m = m[:, :, None]
			if m.shape[:2] != y.shape:
				raise ConfigError("m must have shape (n, t, dm)")
			object.__setattr__(self, "m", m)
		if self.weights is not None:
			w = np.asarray(self.weights, dtype=float)
			if w.shape != (y.shape[0],) or np.any(w < 0) or w.sum() <= 0:
				raise ConfigError("weights must be nonnegative with positive sum")
			object.__setattr__(self, "weights", w / w.sum())
		ser = {}
		for k, v in dict(self.series).items():
			v = np.asarray(v, dtype=float)
			if v.shape != (y.shape[0], y.shape[1] + self.n_init):
				raise ConfigError(f"series {k!r} has shape {v.shape}")
			ser[k] = v
		object.__setattr__(self, "series", ser)
		for name, arr in (("y", y), ("r", r), ("m", self.m)):
			if arr is not None and not np.all(np.isfinite(arr)):
				raise ParseError(f"non-finite values in {name}")
		if self.ids is None:
			object.__setattr__(self, "ids", np.arange(y.shape[0]))
		if self.periods is None:
			object.__setattr__(self, "periods", np.arange(1, y.shape[1] + 1))
		if not self.r_names:
			object.__setattr__(self, "r_names", tuple(f"r{j}" for j in range(r.shape[2])))
		if self.m is not None and not self.m_names:
			object.__setattr__(self, "m_names", tuple(f"m{j}" for j in range(self.m.shape[2])))

	@property
	def n(self) -> int:
		return self.y.shape[0]

	@property
	def t(self) -> int:
		return self.y.shape[1]

	@property
	def d(self) -> int:
		return self.r.shape[2]

	@property
	def w(self) -> np.ndarray:
		"""Normalised weights (equal if none were given)."""
		if self.weights is None:
			return np.full(self.n, 1.0 / self.n)
		return self.weights

	def subset(self, idx) -> "PanelDataset":
		idx = np.asarray(idx)
		return PanelDataset(
			y=self.y[idx], r=self.r[idx],
			m=None if self.m is None else self.m[idx],
			weights=None if self.weights is None else self.weights[idx],
			series={k: v[idx] for k, v in self.series.items()},
			n_init=self.n_init, ids=self.ids[idx], periods=self.periods,
			r_names=self.r_names, m_names=self.m_names, meta=dict(self.meta),
		)

	def gram(self) -> np.ndarray:
		"""Per-individual ``R_i'R_i`` with shape (n, d, d)."""
		return np.einsum("ntj,ntk->njk", self.r, self.r)


# --------------------------------------------------------------------------
# CSV ingestion

_LAG = re.compile(r"^\s*([A-Za-z_][\w]*)\s*\[\s*-(\d+)\s*\]\s*$")


@dataclass(frozen=True)
class PanelSchema:
	"""Column mapping for long-format CSV files.

	``regressors`` and ``homogeneous`` entries are column names, ``"const"``
	for an intercept, or ``"col[-k]"`` for the k-th lag of a column.  When
	lags are requested, the first ``max lag`` periods are used only as
	initial conditions.
	"""

	id: str = "id"
	period: str = "t"
	y: str = "y"
	regressors: tuple = ("const",)
	homogeneous: tuple = ()

	@classmethod
	def from_dict(cls, d: dict) -> "PanelSchema":
		d = dict(d)
		for k in ("regressors", "homogeneous"):
			if k in d:
				d[k] = tuple(d[k])
		return cls(**d)


def _parse_term(term: str):
	if term == "const":
		return ("const", None, 0)
	mt = _LAG.match(term)
	if mt:
		return ("col", mt.group(1), int(mt.group(2)))
	return ("col", term.strip(), 0)


def load_panel_csv(path, schema: PanelSchema | dict | None = None) -> PanelDataset:
	"""Read a balanced long-format panel.

	Raises
	------
	ParseError
		Missing or non-numeric cell (the message carries the file row).
	DuplicateError
		Repeated ``(id, period)`` pair.
	BalanceError
		Some individual lacks a period observed for others.
	"""
	if schema is None:
		schema = PanelSchema()
	elif isinstance(schema, dict):
		schema = PanelSchema.from_dict(schema)
	try:
		df = pd.read_csv(path, dtype=str, keep_default_na=False)
	except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
		raise ParseError(f"cannot read {path}: {exc}") from exc
	df.columns = [c.strip() for c in df.columns]
	terms = [_parse_term(s) for s in schema.regressors] + [_parse_term(s) for s in schema.homogeneous]
	needed = [schema.id, schema.period, schema.y] + sorted({c for k, c, _ in terms if k == "col"} - {schema.y})
	missing = [c for c in needed if c not in df.columns]
	if missing:
		raise ParseError(f"missing columns {missing}")
	num = {}
	for c in needed[1:]:
		vals = pd.to_numeric(df[c].str.strip(), errors="coerce")
		bad = np.flatnonzero(vals.isna().to_numpy())
		if bad.size:
			raise ParseError(f"non-numeric value in column {c!r} at row {bad[0] + 2}", row=int(bad[0] + 2), column=c)
		num[c] = vals.to_numpy(dtype=float)
	ids_raw = df[schema.id].str.strip()
	ids_num = pd.to_numeric(ids_raw, errors="coerce")
	ids = ids_num.to_numpy() if not ids_num.isna().any() else ids_raw.to_numpy()
	per = num[schema.period]
	if np.any(per != np.round(per)):
		raise ParseError("period column must hold integers")
	per = per.astype(int)
	frame = pd.DataFrame({"_id": ids, "_t": per})
	dup = frame.duplicated(keep=False).to_numpy()
	if dup.any():
		k = np.flatnonzero(dup)[0]
		raise DuplicateError(f"duplicate (id, period) = ({ids[k]}, {per[k]})", id=ids[k], period=int(per[k]))
	uid = np.array(sorted(set(ids.tolist())), dtype=ids.dtype)
	uper = np.array(sorted(set(per.tolist())))
	counts = frame.groupby("_id")["_t"].nunique()
	short = [i for i in uid if counts[i] != len(uper)]
	if short:
		raise BalanceError(f"unbalanced panel; incomplete ids {short[:10]}", ids=[_py(i) for i in short])
	ii = np.searchsorted(uid, ids)
	tt = np.searchsorted(uper, per)
	n, traw = len(uid), len(uper)

	def grid(col):
		out = np.empty((n, traw))
		out[ii, tt] = num[col]
		return out

	cols = {c: grid(c) for c in needed[2:]}
	n_init = max([lag for _, _, lag in terms] + [0])
	if n_init >= traw:
		raise ConfigError("lags consume every observed period")
	t = traw - n_init

	def block(spec):
		out = []
		for kind, col, lag in (_parse_term(s) for s in spec):
			if kind == "const":
				out.append(np.ones((n, t)))
			else:
				out.append(cols[col][:, n_init - lag: traw - lag])
		return np.stack(out, axis=2) if out else None

	r = block(schema.regressors)
	if r is None:
		raise ConfigError("at least one regressor is required")
	m = block(schema.homogeneous)
	return PanelDataset(
		y=cols[schema.y][:, n_init:], r=r, m=m, series=cols, n_init=n_init,
		ids=uid, periods=uper[n_init:], r_names=tuple(schema.regressors),
		m_names=tuple(schema.homogeneous),
	)


def _py(v):
	return v.item() if hasattr(v, "item") else v


# --------------------------------------------------------------------------
# Gram matrices

@dataclass(frozen=True)
class GramFactors:
	"""Eigen factorisation of per-individual Gram matrices.

	``half`` satisfies ``half @ half.T == inv(R_i'R_i)``.
	"""

	inv: np.ndarray
	half: np.ndarray
	eigmin: np.ndarray
	eigmax: np.ndarray


def gram_factors(data: PanelDataset, tol: float = GRAM_TOL) -> GramFactors:
	"""Factor every ``R_i'R_i`` and check positive definiteness.

	Raises
	------
	SingularDesignError
		If the smallest eigenvalue of some Gram matrix is not above ``tol``
		times its largest.
	"""
	vals, vecs = np.linalg.eigh(data.gram())
	bad = vals[:, 0] <= tol * np.maximum(vals[:, -1], np.finfo(float).tiny)
	if bad.any():
		idx = np.flatnonzero(bad)
		raise SingularDesignError(
			f"{idx.size} individual(s) with singular R'R, first index {idx[0]}",
			indices=idx[:50], count=int(idx.size),
		)
	half = vecs / np.sqrt(vals)[:, None, :]
	inv = np.einsum("njk,nlk->njl", half, half)
	return GramFactors(inv=inv, half=half, eigmin=vals[:, 0], eigmax=vals[:, -1])


def trim_by_determinant(data: PanelDataset, d0: float) -> PanelDataset:
	"""Keep individuals with ``det(R_i'R_i) >= d0``.

	No default threshold is offered: the choice changes the estimand to a
	subpopulation.
	"""
	keep = np.linalg.det(data.gram()) >= d0
	return data.subset(np.flatnonzero(keep))


def individual_ols(data: PanelDataset, i: int | None = None) -> np.ndarray:
	"""Individual least-squares coefficients ``(R_i'R_i)^{-1} R_i'Y_i``.

	Parameters
	----------
	data : PanelDataset
	i : int, optional
		Individual index.  When omitted all individuals are returned as an
		``(n, d)`` array.
	"""
	sub = data if i is None else data.subset([i])
	try:
		gf = gram_factors(sub)
	except SingularDesignError as exc:
		if i is not None:
			raise SingularDesignError(f"R'R is singular for individual {i}", i=i) from exc
		raise
	ry = np.einsum("ntj,nt->nj", sub.r, sub.y)
	b = np.einsum("njk,nk->nj", gf.inv, ry)
	return b[0] if i is not None else b


# --------------------------------------------------------------------------
# Instruments

@dataclass(frozen=True)
class Window:
	"""Observations of ``var`` at offsets ``lo..hi`` relative to period t.

	``None`` extends the window to the first (``lo``) or last (``hi``)
	observed period.  Offsets outside the observed range are clipped.
	"""

	var: str
	lo: int | None = None
	hi: int | None = 0


@dataclass(frozen=True)
class InstrumentSpec:
	"""Per-period instrument vector ``S_it``: an optional constant plus windows."""

	constant: bool = True
	terms: tuple = ()

	@classmethod
	def from_dict(cls, d: dict) -> "InstrumentSpec":
		terms = tuple(Window(**w) if isinstance(w, dict) else Window(*w) for w in d.get("terms", ()))
		return cls(constant=bool(d.get("constant", True)), terms=terms)


@dataclass(frozen=True)
class InstrumentBlocks:
	"""Block-diagonal instruments stored compactly.

	Row ``l`` of ``S_i`` has the single nonzero entry ``values[i, l]`` in
	column ``period[l]``.
	"""

	values: np.ndarray
	period: np.ndarray
	labels: tuple

	@property
	def L(self) -> int:
		return self.values.shape[1]

	def dims(self, t: int) -> np.ndarray:
		return np.bincount(self.period, minlength=t)

	def dense(self, i: int, t: int | None = None) -> np.ndarray:
		t = int(self.period.max()) + 1 if t is None else t
		out = np.zeros((self.L, t))
		out[np.arange(self.L), self.period] = self.values[i]
		return out

	def sy(self, data: PanelDataset) -> np.ndarray:
		"""``S_i Y_i`` with shape (n, L)."""
		return self.values * data.y[:, self.period]

	def sr(self, data: PanelDataset) -> np.ndarray:
		"""``S_i R_i`` with shape (n, L, d)."""
		return self.values[:, :, None] * data.r[:, self.period, :]

	def sm(self, data: PanelDataset) -> np.ndarray:
		return self.values[:, :, None] * data.m[:, self.period, :]

	def select(self, keep) -> "InstrumentBlocks":
		keep = np.asarray(keep)
		return InstrumentBlocks(self.values[:, keep], self.period[keep], tuple(self.labels[k] for k in keep))


def _raw_rows(data: PanelDataset, spec: InstrumentSpec):
	traw = data.t + data.n_init
	vals, per, labels = [], [], []
	for t in range(data.t):
		now = t + data.n_init
		if spec.constant:
			vals.append(np.ones(data.n))
			per.append(t)
			labels.append(f"const@{t}")
		for w in spec.terms:
			if w.var not in data.series:
				raise ConfigError(f"unknown instrument series {w.var!r}")
			lo = 0 if w.lo is None else max(0, now + w.lo)
			hi = traw - 1 if w.hi is None else min(traw - 1, now + w.hi)
			for s in range(lo, hi + 1):
				vals.append(data.series[w.var][:, s])
				per.append(t)
				labels.append(f"{w.var}[{s}]@{t}")
	if not vals:
		raise ConfigError("instrument specification is empty")
	return np.column_stack(vals), np.asarray(per, dtype=int), tuple(labels)


def assumption3_matrix(data: PanelDataset, values, period) -> np.ndarray:
	"""Weighted ``E[(S_i R_i)(S_i R_i)']``; positive definite under the rank condition."""
	a = values[:, :, None] * data.r[:, period, :]
	a = a * np.sqrt(data.w)[:, None, None]
	flat = a.transpose(0, 2, 1).reshape(-1, a.shape[1])
	return flat.T @ flat


def build_instruments(data: PanelDataset, spec: InstrumentSpec, drop_redundant: bool = False,
					  tol: float = 1e-9) -> InstrumentBlocks:
	"""Assemble block-diagonal instruments and screen them for redundancy.

	The screen requires ``E[(S_i R_i)(S_i R_i)']`` to be positive definite,
	so that no nonzero combination of instrument entries gives a vanishing
	``sum_t R_it S_it' a_t`` for almost every individual.

	Parameters
	----------
	drop_redundant : bool
		When True, entries are added in order and any entry that would make
		the screening matrix singular is dropped instead of raising.
	tol : float
		Relative eigenvalue tolerance of the screen.

	Raises
	------
	RankDeficiencyError
		Names the redundant entry when ``drop_redundant`` is False.
	"""
	values, period, labels = _raw_rows(data, spec)
	q = assumption3_matrix(data, values, period)
	scale = max(np.max(np.abs(np.diag(q))), np.finfo(float).tiny)
	ev, evec = np.linalg.eigh(q)
	if ev[0] > tol * max(ev[-1], scale * 1e-300):
		return InstrumentBlocks(values, period, labels)
	if not drop_redundant:
		a = evec[:, 0]
		k = int(np.argmax(np.abs(a)))
		involved = [labels[j] for j in np.flatnonzero(np.abs(a) > 1e-6 * np.abs(a).max())]
		raise RankDeficiencyError(
			f"instrument entry {labels[k]!r} is redundant", entry=labels[k], involved=involved,
		)
	keep = []
	for j in range(len(labels)):
		trial = keep + [j]
		sub = q[np.ix_(trial, trial)]
		e = np.linalg.eigvalsh(sub)
		if e[0] > tol * max(e[-1], scale):
			keep = trial
	return InstrumentBlocks(values, period, labels).select(keep)


# --------------------------------------------------------------------------
# Moment summary

@dataclass(frozen=True)
class MomentSummary:
	"""Weighted averages of the per-individual terms used by the mean bounds.

	Attribute names follow the quantities they average; ``G`` stands for
	``(R_i'R_i)^{-1}`` and ``A`` for ``S_i R_i``.
	"""

	n: int
	v_s: np.ndarray  # E(A G A')
	y_s: np.ndarray  # E(S Y)
	yy_s: np.ndarray  # E(A G R'Y)
	p_s: np.ndarray  # E(A G)
	m0: float  # E(Y'R G R'Y)
	bhat: np.ndarray  # E(G R'Y)
	r0: np.ndarray  # E(G)
	rr: np.ndarray  # E(R'R)
	ry: np.ndarray  # E(R'Y)
	v_m: np.ndarray | None = None  # E(M'R G R'M)
	cc: np.ndarray | None = None  # E(A G R'M)
	yy_m: np.ndarray | None = None  # E(M'R G R'Y)
	c: np.ndarray | None = None  # E(S M)
	p_m: np.ndarray | None = None  # E(M'R G)
	m0_m: np.ndarray | None = None  # E(M'M)
	y_m: np.ndarray | None = None  # E(M'Y)

	def p0(self, e) -> np.ndarray:
		return self.p_s @ np.asarray(e, dtype=float)

	def b0(self, e) -> float:
		return float(self.bhat @ np.asarray(e, dtype=float))


def _wsum(w, arr):
	"""Weighted sum over the leading axis."""
	return np.tensordot(w, arr, axes=(0, 0))


def moment_summary(data: PanelDataset, blocks: InstrumentBlocks | None = None, e=None,
				   weights: np.ndarray | None = None, factors: GramFactors | None = None) -> MomentSummary:
	"""Average the per-individual building blocks of the mean bounds.

	Parameters
	----------
	data : PanelDataset
	blocks : InstrumentBlocks, optional
		Without instruments the instrument blocks are empty arrays.
	e : array_like, optional
		Accepted for interface symmetry; the summary itself does not depend
		on the direction (see :meth:`MomentSummary.p0`).
	weights : ndarray, optional
		Overrides the dataset weights (used by the bootstrap with multinomial
		counts).
	factors : GramFactors, optional
		Precomputed Gram factorisation.
	"""
	w = data.w if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
	gf = gram_factors(data) if factors is None else factors
	ry_i = np.einsum("ntj,nt->nj", data.r, data.y)
	gry = np.einsum("njk,nk->nj", gf.inv, ry_i)
	hy = np.einsum("njk,nj->nk", gf.half, ry_i)  # half' R'Y
	sw = np.sqrt(w)
	m0 = float(np.dot(w, np.einsum("nk,nk->n", hy, hy)))
	bhat = _wsum(w, gry)
	r0 = _wsum(w, gf.inv)
	rr = _wsum(w, data.gram())
	ry = _wsum(w, ry_i)
	if blocks is not None:
		a = blocks.sr(data)
		ah = np.einsum("nlj,njk->nlk", a, gf.half) * sw[:, None, None]
		flat = ah.transpose(0, 2, 1).reshape(-1, a.shape[1])
		v_s = flat.T @ flat
		y_s = _wsum(w, blocks.sy(data))
		yy_s = _wsum(w, np.einsum("nlj,nj->nl", a, gry))
		p_s = _wsum(w, np.einsum("nlj,njk->nlk", a, gf.inv))
	else:
		v_s = np.zeros((0, 0))
		y_s = yy_s = np.zeros(0)
		p_s = np.zeros((0, data.d))
	extra = {}
	if data.m is not None:
		rm = np.einsum("ntj,ntk->njk", data.r, data.m)  # R'M (n, d, dm)
		hm = np.einsum("njk,njm->nkm", gf.half, rm)  # half' R'M
		grm = np.einsum("njk,nkm->njm", gf.inv, rm)
		extra["v_m"] = _wsum(w, np.einsum("nkm,nkp->nmp", hm, hm))
		extra["yy_m"] = _wsum(w, np.einsum("nkm,nk->nm", hm, hy))
		extra["p_m"] = _wsum(w, np.einsum("njm,njk->nmk", rm, gf.inv))
		extra["m0_m"] = _wsum(w, np.einsum("ntm,ntp->nmp", data.m, data.m))
		extra["y_m"] = _wsum(w, np.einsum("ntm,nt->nm", data.m, data.y))
		if blocks is not None:
			a = blocks.sr(data)
			extra["cc"] = _wsum(w, np.einsum("nlj,njm->nlm", a, grm))
			extra["c"] = _wsum(w, blocks.sm(data))
		else:
			extra["cc"] = extra["c"] = np.zeros((0, data.m.shape[2]))
	v_s = 0.5 * (v_s + v_s.T)
	return MomentSummary(
		n=data.n, v_s=v_s, y_s=y_s, yy_s=yy_s, p_s=p_s, m0=m0, bhat=bhat, r0=0.5 * (r0 + r0.T),
		rr=0.5 * (rr + rr.T), ry=ry, **extra,
	)


def add_lagged_outcome_layout(y_full: np.ndarray, lags: Sequence[int] = (1,), constant: bool = True,
							  series: dict | None = None) -> PanelDataset:
	"""Build an autoregressive layout from a raw outcome array.

	``y_full`` has shape ``(n, T + max(lags))``; the leading columns serve
	as initial conditions.
	"""
	y_full = np.asarray(y_full, dtype=float)
	k = max(lags)
	n, traw = y_full.shape
	cols = [np.ones((n, traw - k))] if constant else []
	cols += [y_full[:, k - lag: traw - lag] for lag in lags]
	names = (("const",) if constant else ()) + tuple(f"y[-{lag}]" for lag in lags)
	ser = {"y": y_full}
	if series:
		ser.update(series)
	return PanelDataset(y=y_full[:, k:], r=np.stack(cols, axis=2), series=ser, n_init=k, r_names=names)
