"""Command line front end.

Every subcommand reads an optional JSON config (``--config``), lets flags
override its keys, validates the result against the shipped schema and
prints a JSON report.  Exit codes: 0 success, 2 input error, 3 numerical
error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from importlib import resources

from .errors import ConfigError, PanelBoundsError

SEED_ENV = "PANELBOUNDS_SEED"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _schema(name: str) -> dict:
	return json.loads(resources.files("panelbounds").joinpath("schemas", name).read_text())


def validate_config(command: str, cfg: dict) -> None:
	"""Raise :class:`ConfigError` when ``cfg`` violates the command's schema."""
	import jsonschema

	root = _schema("config.json")
	try:
		jsonschema.validate(cfg, {"$defs": root["$defs"], "$ref": f"#/$defs/{command}"})
	except jsonschema.ValidationError as exc:
		path = "/".join(str(p) for p in exc.absolute_path)
		raise ConfigError(f"invalid config{' at ' + path if path else ''}: {exc.message}") from None


def validate_report(kind: str, report: dict) -> None:
	import jsonschema

	root = _schema("report.json")
	jsonschema.validate(report, {"$defs": root["$defs"], "$ref": f"#/$defs/{kind}"})


# --------------------------------------------------------------------------
# helpers shared by the commands

def _num(v):
	import numpy as np

	if v is None:
		return None
	v = float(v)
	return v if np.isfinite(v) else None


def _bounds(res) -> dict:
	return {"lower": _num(res.lower), "upper": _num(res.upper), "flags": list(res.flags)}


def _load(cfg: dict):
	"""Dataset from ``data`` (file or simulated sample) or ``population``.

	Returns ``(data, population)`` where ``population`` is the exact
	enumeration for the discrete illustration and ``None`` otherwise.
	"""
	from .dgp import Ar1DGP, DiscreteDGP, sample_panel
	from .oracle import enumerate_population
	from .panel import load_panel_csv

	if "data" in cfg and "population" in cfg:
		raise ConfigError("give either data or population, not both")
	if "population" in cfg:
		p = cfg["population"]
		if p["dgp"] == "illustration":
			if "t" not in p:
				raise ConfigError("population.t is required for the discrete illustration")
			pop = enumerate_population(DiscreteDGP.from_dict(p.get("params", {})), p["t"])
			return pop.to_panel(), pop
		dgp = Ar1DGP(**p.get("params", {}), **({"T": p["t"]} if "t" in p else {}))
		return sample_panel(dgp, p.get("size", 100_000), p.get("seed", cfg.get("seed", 0))), None
	if "data" not in cfg:
		raise ConfigError("a data or population source is required")
	d = cfg["data"]
	if "path" in d:
		return load_panel_csv(d["path"], d.get("schema")), None
	seed = d.get("seed", cfg.get("seed", 0))
	if d["dgp"] == "ar1":
		dgp = Ar1DGP(**d.get("params", {}), **({"T": d["t"]} if "t" in d else {}))
		return sample_panel(dgp, d["n"], seed), None
	if "t" not in d:
		raise ConfigError("data.t is required for the discrete illustration")
	return sample_panel(DiscreteDGP.from_dict(d.get("params", {})), d["n"], seed, T=d["t"]), None


def _instruments(cfg: dict, data):
	from .panel import InstrumentSpec, Window, build_instruments

	spec = cfg.get("instruments")
	drop = True
	if spec is not None:
		drop = spec.get("drop_redundant", True)
		ispec = InstrumentSpec.from_dict(spec)
	elif "x" in data.series:
		ispec = InstrumentSpec(True, (Window("x", None, 0),))
	elif "y" in data.series and data.n_init > 0:
		ispec = InstrumentSpec(True, (Window("y", -5, -1),))
	else:
		ispec = InstrumentSpec(True, ())
	return build_instruments(data, ispec, drop_redundant=drop)


def _box(cfg: dict, required: bool = False):
	import numpy as np

	b = cfg.get("box")
	if b is None:
		if required:
			raise ConfigError("a support box is required")
		return None
	lo, hi = np.asarray(b["lo"], dtype=float), np.asarray(b["hi"], dtype=float)
	if lo.shape != hi.shape or np.any(lo > hi):
		raise ConfigError("box bounds must have equal length with lo <= hi")
	return lo, hi


def _e(cfg: dict, data):
	import numpy as np

	if "e" in cfg:
		e = np.asarray(cfg["e"], dtype=float)
	else:
		e = np.zeros(data.d)
		e[-1] = 1.0
	if e.shape != (data.d,):
		raise ConfigError(f"direction e needs {data.d} entries")
	return e


def _seed(cfg: dict) -> int:
	if "seed" in cfg:
		return int(cfg["seed"])
	env = os.environ.get(SEED_ENV)
	if env is not None:
		try:
			return int(env)
		except ValueError:
			raise ConfigError(f"{SEED_ENV} must be an integer") from None
	return 0


# --------------------------------------------------------------------------
# commands

def cmd_mean_bounds(cfg: dict) -> dict:
	from .dual.problems import dual_mean_bounds
	from .mean_bounds import baseline_bounds, homogeneous_bounds, refined_bounds
	from .oracle import population_outer_bounds

	data, pop = _load(cfg)
	e = _e(cfg, data)
	method = cfg.get("method", "auto")
	if pop is not None and method in ("auto", "dual"):
		res = population_outer_bounds(pop, e)
	elif method == "baseline":
		res = baseline_bounds(data, e)
	elif method == "homogeneous":
		res = homogeneous_bounds(data, _instruments(cfg, data), e)
	elif method == "dual":
		res = dual_mean_bounds(data, _instruments(cfg, data), e, _box(cfg), relax=cfg.get("relax", "auto"))
	else:
		res = refined_bounds(data, _instruments(cfg, data), e)
	out = {"command": "mean-bounds"}
	out.update({k: (_num(v) if k not in ("method", "flags") else v) for k, v in res.to_dict().items()})
	if cfg.get("ci"):
		from .inference import stoye_ci

		ci = stoye_ci(data, _instruments(cfg, data), e, cfg.get("alpha", 0.05), cfg.get("B", 100), _seed(cfg))
		out["ci"] = ci.to_dict()
	return out


def _second_moment(data, blocks, j, box, lambda_min=None, relax="auto"):
	from .dual.problems import selector, variance_bounds

	return variance_bounds(data, blocks, selector(data.d, j), box, lambda_min, relax=relax)


def cmd_var_bounds(cfg: dict) -> dict:
	import numpy as np

	from .dual.problems import dual_mean_bounds

	box = _box(cfg, required=True)
	data, _ = _load(cfg)
	j = cfg.get("selector", data.d - 1)
	if j >= data.d:
		raise ConfigError(f"selector {j} out of range for {data.d} coefficients")
	blocks = _instruments(cfg, data)
	relax = cfg.get("relax", "auto")
	sm = _second_moment(data, blocks, j, box, cfg.get("lambda_min"), relax)
	e = np.zeros(data.d)
	e[j] = 1.0
	mean = dual_mean_bounds(data, blocks, e, box, relax=relax)
	sq = [mean.lower ** 2, mean.upper ** 2]
	sq_min = 0.0 if mean.lower <= 0 <= mean.upper else min(sq)
	var_lo, var_hi = max(sm.lower - max(sq), 0.0), sm.upper - sq_min
	return {"command": "var-bounds", "lower": _num(sm.lower), "upper": _num(sm.upper), "flags": list(sm.flags),
			"mean": _bounds(mean), "variance": {"lower": _num(var_lo), "upper": _num(var_hi), "flags": []}}


def cmd_cdf_bounds(cfg: dict) -> dict:
	from .dual.problems import cdf_bounds_grid

	box = _box(cfg, required=True)
	data, _ = _load(cfg)
	rows = cdf_bounds_grid(data, _instruments(cfg, data), _e(cfg, data), cfg["thresholds"], box,
							relax=cfg.get("relax", "auto"))
	return {"command": "cdf-bounds", "rows": [
		{"threshold": float(r.diagnostics["threshold"]), "lower": float(r.lower), "upper": float(r.upper),
		 "flags": list(r.flags)} for r in rows]}


def cmd_ci(cfg: dict) -> dict:
	from .dual.problems import cdf_problem, estimate_lambda_min, mean_problem, selector, variance_problem
	from .inference import ZETA_MARGIN, as_confidence_interval, stoye_ci

	data, _ = _load(cfg)
	blocks = _instruments(cfg, data)
	par = cfg.get("parameter", {})
	kind = par.get("kind", "mean")
	alpha = cfg.get("alpha", 0.05 if kind == "mean" else 0.1)
	B, seed = cfg.get("B", 100), _seed(cfg)
	method = cfg.get("method", "stoye" if kind == "mean" else "as")
	e = _e(par, data)
	if method == "stoye":
		if kind != "mean":
			raise ConfigError("the union interval applies to mean parameters only")
		ci = stoye_ci(data, blocks, e, alpha, B, seed)
		return {"command": "ci", "ci": ci.to_dict()}
	box = _box(cfg, required=kind != "mean")
	if kind == "mean":
		sl, su = (mean_problem(data, blocks, e, s, box) for s in ("lower", "upper"))
	elif kind == "second_moment":
		j = par.get("selector", data.d - 1)
		e0 = selector(data.d, j)
		lmin = estimate_lambda_min(data)
		sl, su = (variance_problem(data, blocks, e0, box, s, lmin) for s in ("lower", "upper"))
	else:
		if "threshold" not in par:
			raise ConfigError("parameter.threshold is required for distribution intervals")
		sl, su = (cdf_problem(data, blocks, e, par["threshold"], box, s) for s in ("lower", "upper"))
	pen = cfg.get("penalised", [0])
	ci = as_confidence_interval(sl, su, alpha, cfg.get("L", 100), B, seed, penalised=pen, zeta=cfg.get("zeta"),
								margin=cfg.get("margin", ZETA_MARGIN))
	return {"command": "ci", "ci": ci.to_dict()}


def cmd_simulate(cfg: dict) -> dict:
	import numpy as np
	import pandas as pd

	from .dgp import Ar1DGP, DiscreteDGP, sample_panel

	seed = _seed(cfg)
	n = cfg["n"]
	if cfg["dgp"] == "ar1":
		dgp = Ar1DGP(**cfg.get("params", {}), **({"T": cfg["t"]} if "t" in cfg else {}))
		data = sample_panel(dgp, n, seed)
		y = data.series["y"]
		T1 = y.shape[1]
		coef = data.meta["coefficients"]
		df = pd.DataFrame({"id": np.repeat(np.arange(n), T1), "t": np.tile(np.arange(T1), n), "y": y.ravel(),
						   "alpha": np.repeat(coef[:, 0], T1), "beta": np.repeat(coef[:, 1], T1)})
	else:
		if "t" not in cfg:
			raise ConfigError("t is required for the discrete illustration")
		data = sample_panel(DiscreteDGP.from_dict(cfg.get("params", {})), n, seed, T=cfg["t"])
		T1 = data.t
		coef = data.meta["coefficients"]
		df = pd.DataFrame({"id": np.repeat(np.arange(n), T1), "t": np.tile(np.arange(1, T1 + 1), n),
						   "y": data.y.ravel(), "x": data.series["x"].ravel(),
						   "gamma": np.repeat(coef[:, 0], T1), "beta": np.repeat(coef[:, 1], T1)})
	text = df.to_csv(index=False, float_format="%.17g", lineterminator="\n")
	path = cfg.get("output")
	if path:
		with open(path, "w", newline="") as fh:
			fh.write(text)
	else:
		sys.stdout.write(text)
	return {"command": "simulate", "rows": int(len(df)), "path": path}


def cmd_sharp_lp(cfg: dict) -> dict:
	from .dgp import DiscreteDGP
	from .oracle import enumerate_population, population_outer_bounds, sharp_bounds

	dgp = DiscreteDGP.from_dict(cfg.get("params", {}))
	e = cfg.get("e", [0.0, 1.0])
	rows = []
	for T in cfg["t"]:
		t0 = time.perf_counter()
		pop = enumerate_population(dgp, T)
		row = {"T": int(T), "sharp": _bounds(sharp_bounds(pop, e, cfg.get("backend", "highs")))}
		if cfg.get("outer", True):
			row["outer"] = _bounds(population_outer_bounds(pop, e))
		row["runtime_s"] = time.perf_counter() - t0
		rows.append(row)
	return {"command": "sharp-lp", "rows": rows}


def cmd_coverage(cfg: dict) -> dict:
	from .sim import ExperimentConfig, coverage_experiment, finite_population_bounds, lagged_instruments, write_csv

	keys = ("N", "T", "replications", "B", "L", "alpha", "depth", "population_size", "population_seed", "penalised",
			"margin", "scale_factor")
	ec = ExperimentConfig.from_dict({k: cfg[k] for k in keys if k in cfg} | {"seed": _seed(cfg),
									"workers": cfg.get("threads", os.cpu_count() or 1)})
	target = finite_population_bounds(ec.make_dgp(), ec.population_size, ec.population_seed, e=ec.e,
									  instruments=lagged_instruments(ec.depth))
	rows = coverage_experiment(ec, target)
	if cfg.get("csv"):
		write_csv(rows, cfg["csv"])
	return {"command": "coverage", "rows": rows, "target": _bounds(target)}


COMMANDS = {
	"mean-bounds": (cmd_mean_bounds, "mean-bounds", "Bounds on a mean of the coefficients."),
	"var-bounds": (cmd_var_bounds, "var-bounds", "Bounds on a second moment and the variance."),
	"cdf-bounds": (cmd_cdf_bounds, "cdf-bounds", "Bounds on the distribution function over thresholds."),
	"ci": (cmd_ci, "ci-report", "Confidence interval for a bounded parameter."),
	"simulate": (cmd_simulate, "simulate", "Draw a panel from a registered process as CSV."),
	"sharp-lp": (cmd_sharp_lp, "sharp-lp", "Sharp and outer bounds for the discrete illustration."),
	"coverage": (cmd_coverage, "coverage", "Monte Carlo coverage of the moment inequality interval."),
}


def _ints(text):
	return [int(v) for v in text.split(",") if v.strip()]


def _floats(text):
	return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
	ap = argparse.ArgumentParser(prog="panelbounds", description=__doc__.splitlines()[0])
	sub = ap.add_subparsers(dest="command", required=True)
	for name, (_, _, help_) in COMMANDS.items():
		p = sub.add_parser(name, help=help_, description=help_)
		p.add_argument("--config", help="JSON config file")
		p.add_argument("--output", help="write the report (or CSV for simulate) here")
		p.add_argument("--seed", type=int)
		p.add_argument("--threads", type=int, help="worker threads (default: available cores)")
		if name in ("mean-bounds", "var-bounds", "cdf-bounds", "ci"):
			p.add_argument("--data", help="long-format CSV (schema from the config)")
		if name in ("mean-bounds", "var-bounds", "cdf-bounds"):
			p.add_argument("--relax", choices=["none", "auto", "always"],
						   help="relax incompatible sample moments in dual bounds (default: auto)")
		if name == "mean-bounds":
			p.add_argument("--method", choices=["auto", "refined", "baseline", "homogeneous", "dual"])
			p.add_argument("--ci", action="store_true", default=None)
		if name in ("mean-bounds", "ci"):
			p.add_argument("--alpha", type=float)
			p.add_argument("--B", type=int, dest="B")
		if name == "ci":
			p.add_argument("--method", choices=["stoye", "as"])
			p.add_argument("--grid", type=int, dest="L")
		if name == "cdf-bounds":
			p.add_argument("--thresholds", type=_floats)
		if name in ("simulate", "sharp-lp"):
			p.add_argument("--dgp")
		if name == "simulate":
			p.add_argument("--n", type=int)
			p.add_argument("--t", type=int)
		if name == "sharp-lp":
			p.add_argument("--t", type=_ints)
		if name == "coverage":
			p.add_argument("--n", type=int, dest="N")
			p.add_argument("--grid", type=_ints, dest="L")
			p.add_argument("--replications", type=int)
			p.add_argument("--B", type=int, dest="B")
			p.add_argument("--alpha", type=float)
			p.add_argument("--csv")
	return ap


def _merge(args) -> dict:
	cfg = {}
	if args.config:
		try:
			with open(args.config) as fh:
				cfg = json.load(fh)
		except OSError as exc:
			raise ConfigError(f"cannot read config: {exc}") from None
		except json.JSONDecodeError as exc:
			raise ConfigError(f"config is not valid JSON: {exc}") from None
		if not isinstance(cfg, dict):
			raise ConfigError("config must be a JSON object")
	skip = {"command", "config", "data"}
	for k, v in vars(args).items():
		if k not in skip and v is not None:
			cfg[k] = v
	if getattr(args, "data", None):
		cfg["data"] = dict(cfg.get("data", {}), path=args.data) if "path" in cfg.get("data", {}) else {"path": args.data}
	return cfg


def _emit(obj: dict, path=None) -> None:
	text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=False, ensure_ascii=False)
	if path:
		with open(path, "w", encoding="utf-8") as fh:
			fh.write(text + "\n")
	else:
		sys.stdout.write(text + "\n")


def main(argv=None) -> int:
	args = build_parser().parse_args(argv)
	if args.threads:
		for var in _THREAD_VARS:
			os.environ.setdefault(var, str(args.threads))
	func, kind, _ = COMMANDS[args.command]
	try:
		cfg = _merge(args)
		validate_config(args.command, cfg)
		report = func(cfg)
		validate_report(kind, report)
	except PanelBoundsError as exc:
		err = exc.to_dict()
		err["exit_code"] = exc.code
		_emit(err)
		return exc.code
	except Exception as exc:  # noqa: BLE001
		_emit({"error": type(exc).__name__, "message": str(exc), "details": {}, "exit_code": 4})
		return 4
	out = None if args.command == "simulate" else cfg.get("output")
	if args.command == "simulate" and not cfg.get("output"):
		return 0
	_emit(report, out)
	return 0


if __name__ == "__main__":
	sys.exit(main())
