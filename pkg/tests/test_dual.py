"""Inner quadratic programs, envelope evaluation and the outer dual search."""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panelbounds.dgp import Ar1DGP, sample_panel
from panelbounds.dual import (
	MomentSet, cdf_bounds, cdf_bounds_grid, dual_mean_bounds, envelope, inner_values, mean_problem,
	min_relaxation, outer_optimize, penalized_outer_optimize, selector, solve_box_qp, solve_one, variance_bounds,
	variance_problem,
)
from panelbounds.dual.engine import FREE
from panelbounds.dual.problems import relaxation
from panelbounds.errors import Assumption7Violation
from panelbounds.mean_bounds import refined_bounds
from panelbounds.panel import InstrumentSpec, PanelDataset, build_instruments
from panelbounds.sim import lagged_instruments

E2 = np.array([0.0, 1.0])
BOX = (np.array([-3.0, 0.0]), np.array([3.0, 1.0]))


def grid_optimum(c, g, H, lo, hi, sense, step=1e-3, halfspace=None):
	"""Brute force over a dense grid of the box (the grid contains the corners)."""
	u = np.linspace(lo[0], hi[0], int(round((hi[0] - lo[0]) / step)) + 1)
	v = np.linspace(lo[1], hi[1], int(round((hi[1] - lo[1]) / step)) + 1)
	U, V = np.meshgrid(u, v, indexing="ij")
	val = c + g[0] * U + g[1] * V + H[0, 0] * U * U + 2 * H[0, 1] * U * V + H[1, 1] * V * V
	if halfspace is not None:
		a, c0, side = halfspace
		s = a[0] * U + a[1] * V
		val = np.where(s <= c0 if side == "le" else s >= c0, val, np.inf if sense == "min" else -np.inf)
	return val.min() if sense == "min" else val.max()


class TestInnerQP:

	def test_interior_max(self):
		b, v = solve_one(-1.0, [2.0], [[-1.0]], [0.0], [3.0], "max")
		assert b[0] == pytest.approx(1.0) and v == pytest.approx(0.0, abs=1e-12)

	def test_active_bound(self):
		b, v = solve_one(0.0, [0.0], [[1.0]], [2.0], [3.0], "min")
		assert b[0] == pytest.approx(2.0) and v == pytest.approx(4.0)

	def test_unbounded_indefinite(self):
		_, v = solve_one(0.0, [0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]], sense="min")
		assert v == -np.inf

	@pytest.mark.parametrize("sense", ["min", "max"])
	@pytest.mark.parametrize("seed", range(6))
	def test_matches_grid(self, sense, seed):
		rng = np.random.default_rng(seed)
		a = rng.standard_normal((2, 2))
		H = 0.5 * (a + a.T)
		g = rng.standard_normal(2) * 3
		c = rng.standard_normal()
		lo, hi = BOX
		_, v = solve_one(c, g, H, lo, hi, sense)
		assert v == pytest.approx(grid_optimum(c, g, H, lo, hi, sense), abs=1e-5)

	@pytest.mark.parametrize("side", ["le", "ge"])
	@pytest.mark.parametrize("seed", range(4))
	def test_halfspace_matches_grid(self, side, seed):
		rng = np.random.default_rng(100 + seed)
		a = rng.standard_normal((2, 2))
		H = a @ a.T
		g = rng.standard_normal(2)
		lo, hi = BOX
		hs = (np.array([0.0, 1.0]), 0.4, side)
		_, v = solve_one(0.0, g, H, lo, hi, "min", hs)
		assert v == pytest.approx(grid_optimum(0.0, g, H, lo, hi, "min", halfspace=hs), abs=1e-5)

	def test_batch_equals_single(self):
		rng = np.random.default_rng(7)
		n = 20
		a = rng.standard_normal((n, 2, 2))
		H = a + np.swapaxes(a, 1, 2)
		g = rng.standard_normal((n, 2))
		c = rng.standard_normal(n)
		_, vb = solve_box_qp(c, g, H, *BOX, "min")
		for i in range(n):
			assert vb[i] == pytest.approx(solve_one(c[i], g[i], H[i], *BOX, "min")[1], abs=1e-12)


@pytest.fixture(scope="module")
def ar1():
	d = sample_panel(Ar1DGP(T=6), 400, seed=21)
	return d, build_instruments(d, lagged_instruments(2), drop_redundant=True)


class TestEnvelope:

	def test_linear_objective_at_zero(self, ar1):
		d, blocks = ar1
		e = np.array([0.3, -1.0])
		spec = mean_problem(d, blocks, e, "lower", BOX)
		ev = envelope(np.zeros(spec.K), spec)
		assert ev.value == pytest.approx(np.minimum(e * BOX[0], e * BOX[1]).sum())

	def test_closed_form_multiplier(self, ar1):
		d, blocks = ar1
		ref = refined_bounds(d, blocks, E2)
		for side, bound in (("lower", ref.lower), ("upper", ref.upper)):
			spec = mean_problem(d, blocks, E2, side)
			assert envelope(ref.multipliers[side], spec).value == pytest.approx(bound, abs=1e-6)

	@settings(max_examples=20, deadline=None)
	@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 0.75]), st.sampled_from(["lower", "upper"]))
	def test_concavity(self, seed, t, side):
		d = sample_panel(Ar1DGP(T=4), 30, seed=seed % 50)
		blocks = build_instruments(d, lagged_instruments(1), drop_redundant=True)
		spec = mean_problem(d, blocks, E2, side, BOX)
		rng = np.random.default_rng(seed)
		l1, l2 = rng.standard_normal((2, spec.K))
		v1, v2 = (inner_values(x, spec)[0] for x in (l1, l2))
		vm = inner_values(t * l1 + (1 - t) * l2, spec)[0]
		mix = t * v1 + (1 - t) * v2
		if side == "lower":
			assert np.all(vm >= mix - 1e-9)
		else:
			assert np.all(vm <= mix + 1e-9)

	def test_danskin(self, ar1):
		d, blocks = ar1
		spec = mean_problem(d, blocks, E2, "lower", BOX)
		rng = np.random.default_rng(3)
		lam = 0.1 * rng.standard_normal(spec.K)
		lam[0] = -0.5
		ev = envelope(lam, spec)
		h = 1e-6
		for _ in range(20):
			u = rng.standard_normal(spec.K)
			u /= np.linalg.norm(u)
			fd = (envelope(lam + h * u, spec).value - envelope(lam - h * u, spec).value) / (2 * h)
			assert fd == pytest.approx(ev.subgradient @ u, abs=max(1e-5, 1e-3 * abs(ev.value)))


class TestOuter:

	def test_matches_closed_form(self, ar1):
		d, blocks = ar1
		ref = refined_bounds(d, blocks, E2)
		dual = dual_mean_bounds(d, blocks, E2)
		assert dual.lower == pytest.approx(ref.lower, abs=1e-4)
		assert dual.upper == pytest.approx(ref.upper, abs=1e-4)

	def test_point_identified(self):
		# one design shared by everybody makes the mean point identified
		rng = np.random.default_rng(4)
		r = np.repeat(rng.standard_normal((1, 5, 2)), 300, 0)
		r[:, :, 0] = 1.0
		b = np.column_stack([rng.uniform(-1, 1, 300), rng.uniform(0, 1, 300)])
		y = np.einsum("ntj,nj->nt", r, b) + rng.standard_normal((300, 5))
		d = PanelDataset(y=y, r=r, series={"x": r[:, :, 1], "y": y})
		blocks = build_instruments(d, InstrumentSpec(True, ()), drop_redundant=True)
		res = dual_mean_bounds(d, blocks, E2)
		assert res.upper - res.lower == pytest.approx(0.0, abs=2e-4)

	def test_vacuous_moment(self, ar1):
		d, blocks = ar1
		spec = mean_problem(d, blocks, E2, "lower", BOX)
		ms = spec.moments
		vac = MomentSet(np.concatenate([ms.const, np.zeros((d.n, 1))], axis=1),
						np.concatenate([ms.lin, np.zeros((d.n, 1, 2))], axis=1), ms.quad)
		spec2 = replace(spec, moments=vac, domain=spec.domain + (FREE,))
		init = np.concatenate([refined_bounds(d, blocks, E2).multipliers["lower"], [0.7]])
		a = outer_optimize(spec, init[:-1])
		b = outer_optimize(spec2, init)
		assert b.value == pytest.approx(a.value, abs=1e-7)
		assert b.lam[-1] == pytest.approx(0.7)

	def test_deterministic(self, ar1):
		d, blocks = ar1
		spec = mean_problem(d, blocks, E2, "upper", BOX)
		a, b = outer_optimize(spec), outer_optimize(spec)
		assert a.value == b.value
		np.testing.assert_array_equal(a.lam, b.lam)


@pytest.fixture(scope="module")
def small():
	d = sample_panel(Ar1DGP(T=6), 40, seed=5)
	return d, build_instruments(d, lagged_instruments(3), drop_redundant=True)


@pytest.fixture(scope="module")
def cdf_data():
	d = sample_panel(Ar1DGP(T=6), 600, seed=10)
	return d, build_instruments(d, lagged_instruments(2), drop_redundant=True)


class TestPenalty:

	def test_zero_penalty(self, ar1):
		d, blocks = ar1
		spec = mean_problem(d, blocks, E2, "lower", BOX)
		a = outer_optimize(spec)
		b = penalized_outer_optimize(spec, 0.0, range(spec.K))
		assert b.value == pytest.approx(a.value, abs=1e-8)

	def test_large_penalty_drops_moments(self, ar1):
		d, blocks = ar1
		spec = mean_problem(d, blocks, E2, "lower", BOX)
		pen = range(1, spec.K)
		res = penalized_outer_optimize(spec, 1e3, pen)
		assert np.abs(res.lam[1:]).max() < 1e-8
		first = MomentSet(spec.moments.const[:, :1], spec.moments.lin[:, :1], spec.moments.quad)
		dropped = outer_optimize(replace(spec, moments=first, domain=spec.domain[:1]))
		assert res.value == pytest.approx(dropped.value, abs=1e-6)

	def test_relaxation_nonnegative_and_shrinks(self):
		zs = []
		for n in (200, 20_000):
			d = sample_panel(Ar1DGP(T=5), n, seed=6)
			blocks = build_instruments(d, lagged_instruments(2), drop_redundant=True)
			spec = mean_problem(d, blocks, E2, "lower", BOX)
			zs.append(min_relaxation(spec, range(spec.K)))
		assert zs[0] >= 0 and zs[1] < zs[0]

	def test_single_individual(self):
		d = sample_panel(Ar1DGP(T=6), 1, seed=7)
		blocks = build_instruments(d, InstrumentSpec(True, ()), drop_redundant=True)
		spec = mean_problem(d, blocks, E2, "lower", BOX)
		assert min_relaxation(spec, range(spec.K)) > 0

	def test_empty_set_compatible(self, ar1):
		d, blocks = ar1
		spec = mean_problem(d, blocks, E2, "lower", BOX)
		assert min_relaxation(spec, []) == 0.0

	def test_penalised_finite_on_overidentified(self, small):
		d, blocks = small
		spec = mean_problem(d, blocks, E2, "lower", BOX)
		zstar = min_relaxation(spec, range(spec.K))
		assert zstar > 0
		res = penalized_outer_optimize(spec, zstar * 1.5, range(spec.K))
		assert "diverging" not in res.flags
		assert np.isfinite(res.value) and np.abs(res.lam).max() < 1e5

	def test_relaxation_modes(self, small, ar1):
		d, blocks = small
		spec = mean_problem(d, blocks, E2, "lower", BOX)
		assert relaxation(spec, "none") is None
		pen, zeta, zstar = relaxation(spec, "auto")
		assert zeta > zstar > 0 and len(pen) == spec.K


class TestSecondMoment:

	def test_degenerate_noiseless(self):
		rng = np.random.default_rng(8)
		r = np.stack([np.ones((200, 5)), rng.standard_normal((200, 5))], axis=2)
		b0 = np.array([0.5, 0.4])
		y = r @ b0
		d = PanelDataset(y=y, r=r, series={"x": r[:, :, 1], "y": y})
		blocks = build_instruments(d, InstrumentSpec(True, ()), drop_redundant=True)
		res = variance_bounds(d, blocks, selector(2, 1), BOX)
		assert res.lower <= b0[1] ** 2 + 1e-6 <= res.upper + 2e-6

	def test_uniform_slope(self):
		d = sample_panel(Ar1DGP(T=6), 3000, seed=9)
		blocks = build_instruments(d, lagged_instruments(2), drop_redundant=True)
		res = variance_bounds(d, blocks, selector(2, 1), BOX, relax="auto")
		assert res.lower <= 1 / 3 <= res.upper

	def test_near_singular_design(self, ar1):
		d, blocks = ar1
		r = d.r.copy()
		r[0, :, 1] = 1.0 + 1e-7 * np.arange(d.t)
		d2 = PanelDataset(y=d.y, r=r, series=d.series, n_init=d.n_init)
		with pytest.raises(Assumption7Violation):
			variance_bounds(d2, blocks, selector(2, 1), BOX, lambda_min=10.0)

	def test_lambda_toward_zero_degrades(self, ar1):
		d, blocks = ar1
		spec = variance_problem(d, blocks, selector(2, 1), BOX, "lower")
		best = outer_optimize(spec)
		path = []
		for s in (1.0, 0.1, 0.01, 1e-4):
			lam = best.lam.copy()
			lam[0] *= s
			path.append(envelope(lam, spec).value)
		assert np.all(np.array(path) <= best.value + 1e-9)
		assert path[-1] < path[0]


class TestDistribution:

	def test_threshold_below_box(self, cdf_data):
		res = cdf_bounds(*cdf_data, E2, -0.5, BOX)
		assert res.lower == 0.0 and res.upper <= 1.0

	def test_threshold_above_box(self, cdf_data):
		res = cdf_bounds(*cdf_data, E2, 1.5, BOX)
		assert res.upper == 1.0 and res.lower >= 0.0

	def test_grid_monotone_and_valid(self, cdf_data):
		rows = cdf_bounds_grid(*cdf_data, E2, [0.25, 0.5, 0.75], BOX, relax="auto")
		lo = [r.lower for r in rows]
		hi = [r.upper for r in rows]
		assert np.all(np.diff(lo) >= -1e-6) and np.all(np.diff(hi) >= -1e-6)
		for r, c in zip(rows, (0.25, 0.5, 0.75)):
			assert 0.0 <= r.lower <= r.upper <= 1.0
			assert r.contains(c)
