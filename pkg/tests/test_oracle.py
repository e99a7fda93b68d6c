"""Population enumeration, the LP back ends and the sharp programs."""

import numpy as np
import pytest
from scipy import sparse

from oracles import random_feasible_lp, tableau_simplex
from panelbounds.dgp import DiscreteDGP, sample_panel
from panelbounds.errors import EnumerationLimitError, InfeasibleError, UnboundedError
from panelbounds.oracle import (
	LPProblem, build_sharp_lp, enumerate_population, lp_solve, population_outer_bounds, revised_simplex, sharp_bounds,
)


def test_raw_atom_count(pop3):
	assert pop3.n_raw == 3 * 3 * 3**3
	assert pop3.prob.sum() == pytest.approx(1.0, abs=1e-14)


def test_no_shock_one_period():
	dgp = DiscreteDGP(eps_support=(0.0,))
	pop = enumerate_population(dgp, 1)
	assert pop.n_raw == 9
	assert pop.n_atoms == 9
	np.testing.assert_allclose(pop.y[:, 0], pop.b[:, 0] + pop.b[:, 1] * dgp.x1)


@pytest.mark.parametrize("T", [1, 4, 8])
def test_probabilities_sum_to_one(illustration, T):
	pop = enumerate_population(illustration, T)
	assert pop.prob.sum() == pytest.approx(1.0, abs=1e-12)
	assert pop.pw.sum() == pytest.approx(1.0, abs=1e-12)
	assert pop.expect(pop.b[:, 1]) == pytest.approx(0.5, abs=1e-12)


def test_merge_preserves_moments():
	# repeated shock values make distinct paths coincide
	dgp = DiscreteDGP(eps_support=(-1.0, 1.0, -1.0, 1.0))
	raw = enumerate_population(dgp, 4, merge=False)
	merged = enumerate_population(dgp, 4, merge=True)
	assert merged.n_atoms == raw.n_atoms // 2**4
	for t in range(4):
		assert merged.expect(merged.y[:, t]) == pytest.approx(raw.expect(raw.y[:, t]), abs=1e-12)
		assert merged.expect(merged.x[:, t] ** 2) == pytest.approx(raw.expect(raw.x[:, t] ** 2), abs=1e-12)


def test_atom_limit(illustration):
	with pytest.raises(EnumerationLimitError):
		enumerate_population(illustration, 15)


def test_sampling_matches_enumeration(illustration, pop3):
	n = 200_000
	data = sample_panel(illustration, n, seed=3, T=3)
	for t in range(3):
		for arr, pop_arr in ((data.y[:, t], pop3.y[:, t]), (data.r[:, t, 1], pop3.x[:, t])):
			mu = pop3.expect(pop_arr)
			sd = np.sqrt(pop3.expect((pop_arr - mu) ** 2))
			assert abs(arr.mean() - mu) <= 5 * sd / np.sqrt(n) + 1e-12


def test_trajectory_law_matches_enumeration(illustration, pop3):
	n = 200_000
	data = sample_panel(illustration, n, seed=4, T=3)
	# probability of each observable trajectory
	key = np.hstack([data.y, data.r[:, :, 1]])
	for w in np.argsort(pop3.pw)[-5:]:
		target = np.concatenate([pop3.wy[w], pop3.wx[w]])
		freq = np.mean(np.all(np.isclose(key, target), axis=1))
		p = pop3.pw[w]
		assert abs(freq - p) < 5 * np.sqrt(p * (1 - p) / n)


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_lp_single_equality(backend):
	res = lp_solve(LPProblem(np.array([1.0]), np.array([[1.0]]), np.array([1.0])), backend)
	assert res.value == pytest.approx(1.0, abs=1e-12)
	assert res.gap < 1e-10


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_lp_redundant_rows(backend):
	A = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
	b = np.array([1.0, 1.0])
	c = np.array([1.0, 2.0, 3.0])
	base = lp_solve(LPProblem(c, A, b), backend)
	dup = lp_solve(LPProblem(c, np.vstack([A, A, np.zeros((1, 3))]), np.concatenate([b, b, [0.0]])), backend)
	assert dup.value == pytest.approx(base.value, abs=1e-10)
	assert dup.gap < 1e-9


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_lp_infeasible(backend):
	A = np.array([[1.0, 1.0]])
	with pytest.raises(InfeasibleError):
		lp_solve(LPProblem(np.ones(2), A, np.array([-1.0])), backend)
	with pytest.raises(InfeasibleError):
		lp_solve(LPProblem(np.ones(2), np.zeros((1, 2)), np.array([1.0])), backend)


@pytest.mark.parametrize("backend", ["highs", "simplex"])
def test_lp_unbounded(backend):
	A = np.array([[1.0, -1.0]])
	with pytest.raises(UnboundedError):
		lp_solve(LPProblem(np.array([0.0, -1.0]), A, np.array([0.0])), backend)


@pytest.mark.parametrize("seed", range(5))
def test_backends_agree_with_tableau(seed):
	rng = np.random.default_rng(seed)
	A, b, c = random_feasible_lp(rng, 20, 45)
	status, ref, _ = tableau_simplex(A, b, c)
	assert status == "optimal"
	for backend in ("highs", "simplex"):
		res = lp_solve(LPProblem(c, A, b), backend)
		assert res.value == pytest.approx(ref, abs=1e-7 * max(1.0, abs(ref)))
		assert res.gap <= 1e-8 * max(1.0, abs(ref))
		assert np.all(res.x >= -1e-9)
		np.testing.assert_allclose(A @ res.x, b, atol=1e-8)


def test_max_sense_is_negated_min():
	rng = np.random.default_rng(7)
	A, b, c = random_feasible_lp(rng, 10, 25)
	# bounded in both directions once the total mass is fixed
	A = np.vstack([A, np.ones(25)])
	b = np.append(b, b.sum() * 0 + A[:-1].shape[1])
	try:
		hi = lp_solve(LPProblem(c, A, b, "max")).value
		lo = lp_solve(LPProblem(-c, A, b, "min")).value
	except InfeasibleError:
		pytest.skip("random program infeasible after adding the mass row")
	assert hi == pytest.approx(-lo, abs=1e-8)


def test_revised_simplex_direct():
	A = np.array([[1.0, 2.0, 1.0, 0.0], [3.0, 1.0, 0.0, 1.0]])
	b = np.array([4.0, 6.0])
	c = np.array([-1.0, -1.0, 0.0, 0.0])
	x, y, _ = revised_simplex(A, b, c)
	# vertex (8/5, 6/5)
	np.testing.assert_allclose(x[:2], [1.6, 1.2], atol=1e-10)
	assert c @ x == pytest.approx(b @ y, abs=1e-10)


def test_constant_objective_is_one(pop3):
	def one(wy, wx, support):
		return np.ones((wy.shape[0], support.shape[0]))

	for sense in ("min", "max"):
		res = lp_solve(build_sharp_lp(pop3, one, sense=sense))
		assert res.value == pytest.approx(1.0, abs=1e-9)


def test_sharp_program_is_sparse(pop3):
	lp = build_sharp_lp(pop3)
	assert sparse.issparse(lp.A_eq)
	assert lp.A_eq.shape[1] == pop3.wy.shape[0] * 9


@pytest.fixture(scope="module")
def sharp3(pop3):
	return sharp_bounds(pop3)


def test_sharp_contains_truth(sharp3):
	assert sharp3.lower <= 0.5 <= sharp3.upper
	assert sharp3.diagnostics["gap"] <= 1e-8


def test_sharp_inside_outer(pop3, sharp3):
	outer = population_outer_bounds(pop3, method="lp")
	assert outer.lower <= sharp3.lower + 1e-8
	assert sharp3.upper <= outer.upper + 1e-8


def test_sharp_backends_agree(illustration):
	# the dense back end is for small programs
	pop = enumerate_population(illustration, 2)
	ref, alt = sharp_bounds(pop), sharp_bounds(pop, backend="simplex")
	assert alt.lower == pytest.approx(ref.lower, abs=1e-8)
	assert alt.upper == pytest.approx(ref.upper, abs=1e-8)


@pytest.mark.parametrize("T", [3, 4])
def test_outer_dual_matches_primal(illustration, T):
	pop = enumerate_population(illustration, T)
	dual = population_outer_bounds(pop, method="dual")
	primal = population_outer_bounds(pop, method="lp")
	assert dual.lower == pytest.approx(primal.lower, abs=1e-6)
	assert dual.upper == pytest.approx(primal.upper, abs=1e-6)


def test_sharp_narrows_with_t(illustration, sharp3):
	s4 = sharp_bounds(enumerate_population(illustration, 4))
	assert s4.lower >= sharp3.lower - 1e-8
	assert s4.upper <= sharp3.upper + 1e-8
