# %% [markdown]
# # Coverage of the moment-inequality interval
#
# Autoregressive panel with uniform intercepts and slopes.  A draw of
# 100 000 individuals stands in for the population; its refined bounds on
# ``E(beta)`` are the coverage target.

# %%
from panelbounds.sim import ExperimentConfig, coverage_experiment, finite_population_bounds, lagged_instruments

cfg = ExperimentConfig(N=500, T=10, replications=20, B=100, L=(50, 100, 200), alpha=0.1, seed=1)
target = finite_population_bounds(cfg.make_dgp(), cfg.population_size, cfg.population_seed,
								  instruments=lagged_instruments(cfg.depth))
print(f"target [{target.lower:.4f}, {target.upper:.4f}]")

# %% [markdown]
# Twenty replications only, so the rates are rough; the acceptance suite
# runs one hundred and the full study one thousand.

# %%
for row in coverage_experiment(cfg, target):
	print(f"L={row['L']:4d}  coverage={row['coverage']:.2f}  (lower {row['coverage_lower']:.2f},"
		  f" upper {row['coverage_upper']:.2f})  failures={row['failures']}")
