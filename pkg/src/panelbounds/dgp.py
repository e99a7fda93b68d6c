"""Data generating processes and samplers.

Two families are provided: :class:`DiscreteDGP`, a finite-support model
with a threshold feedback rule (exactly enumerable), and :class:`Ar1DGP`, a
first-order autoregression with uniformly distributed intercept and slope.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .panel import PanelDataset, add_lagged_outcome_layout


def make_rng(seed, *stream) -> np.random.Generator:
	"""Counter-based generator keyed by ``(seed, *stream)``."""
	ss = np.random.SeedSequence([int(seed)] + [int(s) for s in stream])
	return np.random.Generator(np.random.Philox(ss))


def _probs(p, k):
	p = np.full(k, 1.0 / k) if p is None else np.asarray(p, dtype=float)
	if p.shape != (k,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
		raise ConfigError("probabilities must be nonnegative and sum to one")
	return p


@dataclass(frozen=True)
class DiscreteDGP:
	"""``Y_t = gamma + beta X_t + eps_t`` with ``X_t`` a step function of ``Y_{t-1}``.

	``X_1 = x1``; afterwards ``X_t = levels[k]`` where ``k`` counts the
	thresholds that ``Y_{t-1}`` reaches (``thresholds[k-1] <= Y_{t-1}``).
	Intercept, slope and shocks are independent with finite supports.
	"""

	gamma_support: tuple = (-1.0, 0.0, 1.0)
	beta_support: tuple = (0.0, 0.5, 1.0)
	eps_support: tuple = (-1.0, 0.0, 1.0)
	gamma_probs: tuple | None = None
	beta_probs: tuple | None = None
	eps_probs: tuple | None = None
	x1: float = 1.0
	thresholds: tuple = (-1.0, 1.0)
	levels: tuple = (-1.0, 0.0, 1.0)

	def __post_init__(self):
		_probs(self.gamma_probs, len(self.gamma_support))
		_probs(self.beta_probs, len(self.beta_support))
		pe = _probs(self.eps_probs, len(self.eps_support))
		if abs(pe @ np.asarray(self.eps_support, dtype=float)) > 1e-12:
			raise ConfigError("shocks must have mean zero")
		if len(self.levels) != len(self.thresholds) + 1:
			raise ConfigError("need one more level than thresholds")
		if np.any(np.diff(self.thresholds) <= 0):
			raise ConfigError("thresholds must be strictly increasing")

	@classmethod
	def illustration(cls) -> "DiscreteDGP":
		"""Three-point intercept, slope and shock laws with the (-1, 1) threshold rule."""
		return cls()

	@classmethod
	def from_dict(cls, d: dict) -> "DiscreteDGP":
		return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

	def to_dict(self) -> dict:
		return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

	@property
	def pg(self):
		return _probs(self.gamma_probs, len(self.gamma_support))

	@property
	def pb(self):
		return _probs(self.beta_probs, len(self.beta_support))

	@property
	def pe(self):
		return _probs(self.eps_probs, len(self.eps_support))

	def feedback(self, y_prev):
		idx = np.searchsorted(np.asarray(self.thresholds), y_prev, side="right")
		return np.asarray(self.levels, dtype=float)[idx]

	def simulate(self, gamma, beta, eps):
		"""Trajectories for given primitives; ``eps`` has shape (n, T)."""
		n, T = eps.shape
		x = np.empty((n, T))
		y = np.empty((n, T))
		x[:, 0] = self.x1
		for t in range(T):
			if t:
				x[:, t] = self.feedback(y[:, t - 1])
			y[:, t] = gamma + beta * x[:, t] + eps[:, t]
		return y, x

	def mean_beta(self) -> float:
		return float(self.pb @ np.asarray(self.beta_support))

	def coefficient_support(self) -> np.ndarray:
		g, b = np.meshgrid(self.gamma_support, self.beta_support, indexing="ij")
		return np.column_stack([g.ravel(), b.ravel()]).astype(float)

	def coefficient_probs(self) -> np.ndarray:
		return np.outer(self.pg, self.pb).ravel()


@dataclass(frozen=True)
class Ar1DGP:
	"""``Y_t = alpha + beta Y_{t-1} + eps_t`` with ``Y_0 = beta + z``.

	``alpha ~ U[alpha_low, alpha_high]``, ``beta ~ U[beta_low, beta_high]``,
	``eps`` and ``z`` standard normal (scaled by ``noise_sd`` and
	``init_sd``).  Equal beta bounds give a degenerate slope.
	"""

	T: int = 10
	alpha_low: float = -3.0
	alpha_high: float = 3.0
	beta_low: float = 0.0
	beta_high: float = 1.0
	noise_sd: float = 1.0
	init_sd: float = 1.0

	def __post_init__(self):
		if self.T < 2:
			raise ConfigError("T must be at least 2")
		if self.alpha_low > self.alpha_high or self.beta_low > self.beta_high:
			raise ConfigError("uniform bounds must be ordered")

	@classmethod
	def from_dict(cls, d: dict) -> "Ar1DGP":
		return cls(**d)

	def to_dict(self) -> dict:
		return asdict(self)

	def mean_beta(self) -> float:
		return 0.5 * (self.beta_low + self.beta_high)

	def second_moment_beta(self) -> float:
		a, b = self.beta_low, self.beta_high
		return (a * a + a * b + b * b) / 3.0

	def cdf_beta(self, c: float) -> float:
		if self.beta_high == self.beta_low:
			return float(c >= self.beta_low)
		return float(np.clip((c - self.beta_low) / (self.beta_high - self.beta_low), 0.0, 1.0))

	def box(self):
		"""Support box of ``(alpha, beta)``."""
		return (np.array([self.alpha_low, self.beta_low]), np.array([self.alpha_high, self.beta_high]))


def sample_panel(dgp, n: int, seed: int = 0, T: int | None = None, stream: int = 0) -> PanelDataset:
	"""Draw ``n`` independent individuals.

	``T`` is required for :class:`DiscreteDGP` (the autoregression carries
	its own horizon).  The true coefficients are stored in
	``meta["coefficients"]``.  ``stream`` selects an independent substream
	of ``seed``.
	"""
	if isinstance(dgp, Ar1DGP):
		return sample_ar1(dgp, n, seed, stream)
	if isinstance(dgp, DiscreteDGP):
		if T is None:
			raise ConfigError("the horizon T is required for discrete processes")
		return sample_discrete(dgp, n, T, seed, stream)
	raise ConfigError(f"unknown process {type(dgp).__name__}")


def sample_ar1(dgp: Ar1DGP, n: int, seed: int = 0, stream: int = 0) -> PanelDataset:
	rng = make_rng(seed, stream)
	alpha = rng.uniform(dgp.alpha_low, dgp.alpha_high, n)
	beta = rng.uniform(dgp.beta_low, dgp.beta_high, n) if dgp.beta_high > dgp.beta_low else np.full(n, dgp.beta_low)
	y = np.empty((n, dgp.T + 1))
	y[:, 0] = beta + dgp.init_sd * rng.standard_normal(n)
	eps = dgp.noise_sd * rng.standard_normal((n, dgp.T))
	for t in range(1, dgp.T + 1):
		y[:, t] = alpha + beta * y[:, t - 1] + eps[:, t - 1]
	data = add_lagged_outcome_layout(y)
	data.meta["coefficients"] = np.column_stack([alpha, beta])
	return data


def sample_discrete(dgp: DiscreteDGP, n: int, T: int, seed: int = 0, stream: int = 0) -> PanelDataset:
	rng = make_rng(seed, stream)
	gs = np.asarray(dgp.gamma_support, dtype=float)
	bs = np.asarray(dgp.beta_support, dtype=float)
	es = np.asarray(dgp.eps_support, dtype=float)
	gamma = gs[rng.choice(len(gs), n, p=dgp.pg)]
	beta = bs[rng.choice(len(bs), n, p=dgp.pb)]
	eps = es[rng.choice(len(es), (n, T), p=dgp.pe)]
	y, x = dgp.simulate(gamma, beta, eps)
	data = discrete_panel(y, x)
	data.meta["coefficients"] = np.column_stack([gamma, beta])
	return data


def discrete_panel(y, x, weights=None) -> PanelDataset:
	"""Panel with regressors ``(1, X_t)`` and raw series ``x`` and ``y``."""
	r = np.stack([np.ones_like(x), x], axis=2)
	return PanelDataset(y=y, r=r, weights=weights, series={"x": x, "y": y}, r_names=("const", "x"))
