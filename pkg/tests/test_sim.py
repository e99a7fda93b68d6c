"""Finite-population targets and the coverage harness."""

import csv

import numpy as np
import pytest

from panelbounds.dgp import Ar1DGP, DiscreteDGP
from panelbounds.errors import ConfigError
from panelbounds.sim import (
	CSV_FIELDS, ExperimentConfig, coverage_experiment, finite_population_bounds, run_replications, lagged_instruments,
	summarize, write_csv,
)

SMALL = dict(N=200, T=6, replications=4, B=30, L=(10, 20), depth=2, population_size=5000)


@pytest.fixture(scope="module")
def target():
	cfg = ExperimentConfig(**SMALL)
	return finite_population_bounds(cfg.make_dgp(), cfg.population_size, cfg.population_seed, e=cfg.e,
									instruments=lagged_instruments(2))


@pytest.mark.parametrize("bad", [
	{"N": 0}, {"replications": -1}, {"L": (1,)}, {"alpha": 1.0}, {"alpha": -0.1}, {"dgp": "illustration"},
	{"parameter": "cdf"}, {"B": 0},
])
def test_config_validation(bad):
	with pytest.raises(ConfigError):
		ExperimentConfig(**(SMALL | bad))


def test_config_round_trip():
	cfg = ExperimentConfig(**SMALL)
	assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
	assert ExperimentConfig(L=50).L == (50,)


def test_population_bounds_contain_truth():
	dgp = Ar1DGP(T=6)
	res = finite_population_bounds(dgp, 20_000, seed=1)
	assert res.lower <= dgp.mean_beta() <= res.upper


def test_population_second_moment_contains_truth():
	dgp = Ar1DGP(T=4)
	res = finite_population_bounds(dgp, 5000, seed=2, parameter="second_moment")
	assert res.lower - 1e-6 <= dgp.second_moment_beta() <= res.upper + 1e-6


def test_population_rejects_discrete():
	with pytest.raises(ConfigError):
		finite_population_bounds(DiscreteDGP(), 100)


def test_population_rejects_unknown_parameter():
	with pytest.raises(ConfigError):
		finite_population_bounds(Ar1DGP(T=4), 500, parameter="median")


def test_deterministic(target):
	cfg = ExperimentConfig(**SMALL, seed=5)
	a = coverage_experiment(cfg, target)
	b = coverage_experiment(cfg, target)
	strip = lambda rows: [{k: v for k, v in r.items() if k != "runtime_s"} for r in rows]
	assert strip(a) == strip(b)


def test_parallel_matches_serial(target):
	cfg = ExperimentConfig(**SMALL, seed=6)
	serial = run_replications(cfg, (target.lower, target.upper))
	par = run_replications(ExperimentConfig(**SMALL, seed=6, workers=2), (target.lower, target.upper))
	for r, s in zip(serial, par):
		assert r["rep"] == s["rep"]
		for L in cfg.L:
			assert r[L] == s[L]


def test_alpha_zero_full_coverage(target):
	rows = coverage_experiment(ExperimentConfig(**SMALL, alpha=0.0, seed=1), target)
	assert [r["coverage"] for r in rows] == [1.0, 1.0]


def test_alpha_widens_interval(target):
	t = (target.lower, target.upper)
	wide = run_replications(ExperimentConfig(**SMALL, alpha=0.05, seed=1), t)
	narrow = run_replications(ExperimentConfig(**SMALL, alpha=0.5, seed=1), t)
	for w, n in zip(wide, narrow):
		for L in SMALL["L"]:
			assert w[L][0] <= n[L][0] + 1e-12
			assert w[L][1] >= n[L][1] - 1e-12
			assert w[L][2] >= n[L][2] and w[L][3] >= n[L][3]


def test_replications_record_every_grid(target):
	cfg = ExperimentConfig(**SMALL, seed=2)
	recs = run_replications(cfg, (target.lower, target.upper))
	assert [r["rep"] for r in recs] == list(range(cfg.replications))
	for rec in recs:
		assert "error" not in rec
		for L in cfg.L:
			lo, hi, cl, cu = rec[L]
			assert cl == (lo <= target.lower <= hi)
			assert cu == (lo <= target.upper <= hi)


def test_summary_uses_minimum_endpoint():
	cfg = ExperimentConfig(**SMALL)
	recs = [{"rep": i, "runtime_s": 0.1, 10: (0, 1, True, i < 2), 20: (0, 1, True, True)} for i in range(4)]
	rows = summarize(cfg, recs)
	assert rows[0]["coverage"] == 0.5
	assert rows[0]["coverage_lower"] == 1.0
	assert rows[0]["stderr"] == pytest.approx(0.25)
	assert rows[1]["coverage"] == 1.0
	assert rows[0]["failures"] == 0


def test_summary_counts_failures():
	cfg = ExperimentConfig(**SMALL)
	recs = [{"rep": 0, "runtime_s": 0.1, "error": "RankDeficiencyError"}]
	rows = summarize(cfg, recs)
	assert rows[0]["failures"] == 1
	assert np.isnan(rows[0]["coverage"])


def test_csv(tmp_path):
	cfg = ExperimentConfig(**SMALL)
	rows = summarize(cfg, [{"rep": 0, "runtime_s": 0.2, 10: (0, 1, True, True), 20: (0, 1, False, True)}])
	path = tmp_path / "cov.csv"
	write_csv(rows, path)
	with open(path) as fh:
		got = list(csv.DictReader(fh))
	assert tuple(got[0]) == CSV_FIELDS
	assert [float(r["coverage"]) for r in got] == [1.0, 0.0]
	assert [int(r["L"]) for r in got] == [10, 20]
