"""Closed-form mean bounds."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelbounds.dgp import Ar1DGP, sample_panel
from panelbounds.errors import HomoCollinearityError
from panelbounds.mean_bounds import (
	MisspecificationWarning, baseline_bounds, homogeneous_bounds, refined_bounds, smooth_sqrt, smoothed_bounds,
)
from panelbounds.panel import InstrumentSpec, PanelDataset, Window, build_instruments
from panelbounds.sim import lagged_instruments

from conftest import random_panel

E2 = np.array([0.0, 1.0])


def _ar1(n=400, T=6, seed=0, **kw):
	return sample_panel(Ar1DGP(T=T, **kw), n, seed=seed)


def test_identical_individuals_collapse():
	one = random_panel(np.random.default_rng(0), n=1)
	d = PanelDataset(y=np.repeat(one.y, 4, 0), r=np.repeat(one.r, 4, 0))
	res = baseline_bounds(d, E2)
	assert res.e_term == pytest.approx(0.0, abs=1e-12)
	assert res.d_term == pytest.approx(0.0, abs=1e-10)
	b = np.linalg.lstsq(one.r[0], one.y[0], rcond=None)[0]
	assert res.lower == pytest.approx(b[1], abs=1e-8)
	assert res.upper == pytest.approx(b[1], abs=1e-8)


def test_noiseless_homogeneous_coefficient():
	rng = np.random.default_rng(1)
	d0 = random_panel(rng)
	b0 = np.array([0.4, -1.2])
	d = PanelDataset(y=np.einsum("ntj,j->nt", d0.r, b0), r=d0.r, series=d0.series)
	res = baseline_bounds(d, E2)
	assert abs(res.d_term) < 1e-10
	assert res.contains(b0[1], 1e-8)


def test_degenerate_design_point_identified():
	# same design for everybody: (R'R)^{-1} e is constant across individuals
	rng = np.random.default_rng(2)
	r = np.repeat(rng.standard_normal((1, 5, 2)), 50, 0)
	y = rng.standard_normal((50, 5))
	res = baseline_bounds(PanelDataset(y=y, r=r), E2)
	assert res.e_term == pytest.approx(0.0, abs=1e-12)
	# the width is the square root of a rounding-level product
	assert res.width == pytest.approx(0.0, abs=1e-7)


def test_history_refines_baseline():
	d = sample_panel(Ar1DGP(T=5), 2000, seed=3)
	base = baseline_bounds(d, E2)
	blocks = build_instruments(d, lagged_instruments(5), drop_redundant=True)
	ref = refined_bounds(d, blocks, E2)
	assert base.lower <= ref.lower + 1e-8 and ref.upper <= base.upper + 1e-8


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_more_instruments_never_widen(depth):
	d = _ar1(n=1500, T=6, seed=4)
	small = refined_bounds(d, build_instruments(d, lagged_instruments(depth), drop_redundant=True), E2)
	large = refined_bounds(d, build_instruments(d, lagged_instruments(depth + 1), drop_redundant=True), E2)
	assert small.lower <= large.lower + 1e-8 and large.upper <= small.upper + 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_translation_equivariance(seed, c0, c1):
	d = random_panel(np.random.default_rng(seed), n=60, t=5)
	spec = InstrumentSpec(True, (Window("x", None, 0),))
	blocks = build_instruments(d, spec, drop_redundant=True)
	c = np.array([c0, c1])
	shifted = PanelDataset(y=d.y + np.einsum("ntj,j->nt", d.r, c), r=d.r, series=d.series)
	with warnings.catch_warnings():
		warnings.simplefilter("ignore", MisspecificationWarning)
		a = refined_bounds(d, blocks, E2)
		b = refined_bounds(shifted, blocks, E2)
	assert b.lower - a.lower == pytest.approx(c1, abs=1e-8)
	assert b.upper - a.upper == pytest.approx(c1, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_e_term_nonnegative(seed):
	d = random_panel(np.random.default_rng(seed), n=30, t=4)
	blocks = build_instruments(d, InstrumentSpec(True, (Window("x", None, 0),)), drop_redundant=True)
	with warnings.catch_warnings():
		warnings.simplefilter("ignore", MisspecificationWarning)
		res = refined_bounds(d, blocks, E2)
	assert res.e_term >= -1e-10


def test_width_formula():
	d = _ar1(seed=5)
	res = refined_bounds(d, build_instruments(d, lagged_instruments(2), drop_redundant=True), E2)
	assert res.d_term >= 0
	assert res.width == pytest.approx(np.sqrt(res.e_term * res.d_term), rel=1e-12)


def test_negative_d_reported_smoothed():
	# a tiny sample with many instruments violates the moments jointly
	d = _ar1(n=12, T=6, seed=6)
	blocks = build_instruments(d, lagged_instruments(1), drop_redundant=True)
	with pytest.warns(MisspecificationWarning):
		res = refined_bounds(d, blocks, E2)
	assert res.d_term < 0
	assert "negative_d" in res.flags
	assert res.lower > res.upper


class TestSmoothed:

	@pytest.mark.parametrize("r", [1e-2, 1e-4, 1e-6])
	def test_limit(self, r):
		lo, hi = smoothed_bounds(0.3, 2.0, 0.5, r)
		assert lo == pytest.approx(0.3 - 0.5, abs=2 * r)
		assert hi == pytest.approx(0.3 + 0.5, abs=2 * r)

	@pytest.mark.parametrize("r", [1e-2, 1e-6])
	def test_zero_d(self, r):
		lo, hi = smoothed_bounds(1.0, 3.0, 0.0, r)
		assert (lo + hi) / 2 == pytest.approx(1.0)
		# s(e, 0) - s(e, -0) vanishes, the interval degenerates to the centre
		assert hi - lo == pytest.approx(0.0, abs=1e-12)
		assert smooth_sqrt(3.0, 0.0, r) == pytest.approx(np.sqrt(r / 2))

	def test_reversed(self):
		lo, hi = smoothed_bounds(0.2, 1.0, -1.0, 1e-6)
		assert lo == pytest.approx(0.7, abs=1e-6)
		assert hi == pytest.approx(-0.3, abs=1e-6)

	@settings(max_examples=50, deadline=None)
	@given(st.floats(0, 10), st.floats(-10, 10), st.floats(1e-8, 1e-2))
	def test_close_to_exact(self, e, dd, r):
		lo, hi = smoothed_bounds(0.0, e, dd, r)
		exact = 0.5 * (np.sqrt(max(e * dd, 0)) - np.sqrt(max(-e * dd, 0)))
		assert hi == pytest.approx(exact, abs=np.sqrt(r))


class TestHomogeneous:

	@staticmethod
	def _dummies(n, T):
		m = np.zeros((n, T, 2))
		m[:, 1, 0] = 1.0
		m[:, 2, 1] = 1.0
		return m

	def test_zero_columns_rejected(self):
		d = _ar1(n=50, T=4)
		d2 = PanelDataset(y=d.y, r=d.r, m=np.zeros((d.n, d.t, 1)), series=d.series, n_init=d.n_init)
		with pytest.raises(HomoCollinearityError):
			homogeneous_bounds(d2, build_instruments(d2, lagged_instruments(1), drop_redundant=True), E2)

	def test_noiseless(self):
		rng = np.random.default_rng(7)
		base = random_panel(rng, n=80, t=5)
		b0, delta = np.array([0.5, 1.5]), np.array([0.3, -0.2])
		m = self._dummies(80, 5)
		y = np.einsum("ntj,j->nt", base.r, b0) + m @ delta
		d = PanelDataset(y=y, r=base.r, m=m, series=base.series)
		res = homogeneous_bounds(d, build_instruments(d, InstrumentSpec(True, ()), drop_redundant=True), E2)
		assert res.contains(b0[1], 1e-6)

	def test_time_dummies_match_partialled(self):
		delta = np.array([0.3, -0.2])
		d = _ar1(n=20_000, T=6, seed=8)
		m = self._dummies(d.n, d.t)
		spec = lagged_instruments(5)
		blocks = build_instruments(d, spec, drop_redundant=True)
		ref = refined_bounds(d, blocks, E2)
		# the dummies shift the outcome but not the lagged regressor
		d2 = PanelDataset(y=d.y + m @ delta, r=d.r, m=m, series=d.series, n_init=d.n_init)
		hom = homogeneous_bounds(d2, blocks, E2)
		assert hom.contains(0.5 * (ref.lower + ref.upper))
		assert hom.width >= ref.width - 1e-8
