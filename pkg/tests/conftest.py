"""Shared fixtures."""

import warnings

import numpy as np
import pytest

from panelbounds.dgp import Ar1DGP, DiscreteDGP, sample_panel
from panelbounds.oracle import enumerate_population, history_instruments
from panelbounds.panel import PanelDataset, build_instruments
from panelbounds.sim import lagged_instruments


def pytest_configure(config):
	warnings.filterwarnings("ignore", category=RuntimeWarning, module="scipy")


@pytest.fixture(scope="session")
def illustration():
	return DiscreteDGP.illustration()


@pytest.fixture(scope="session")
def pop3(illustration):
	return enumerate_population(illustration, 3)


@pytest.fixture(scope="session")
def pop3_panel(pop3):
	data = pop3.to_panel()
	return data, build_instruments(data, history_instruments(), drop_redundant=True)


@pytest.fixture(scope="session")
def ar1_small():
	data = sample_panel(Ar1DGP(T=6), 300, seed=11)
	return data, build_instruments(data, lagged_instruments(2), drop_redundant=True)


def random_panel(rng, n=40, t=4, d=2):
	"""Generic panel with a constant and Gaussian regressors."""
	r = rng.standard_normal((n, t, d))
	r[:, :, 0] = 1.0
	b = rng.standard_normal((n, d))
	y = np.einsum("ntj,nj->nt", r, b) + rng.standard_normal((n, t))
	return PanelDataset(y=y, r=r, series={"x": r[:, :, 1], "y": y})


ACCEPTANCE_LINES = []


@pytest.fixture
def announce(capsys):
	"""Print and record one pass/fail line for an acceptance criterion."""

	def emit(number, ok, detail):
		line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
		ACCEPTANCE_LINES.append(line)
		with capsys.disabled():
			print("\n" + line)
		return ok

	return emit


def pytest_terminal_summary(terminalreporter):
	if ACCEPTANCE_LINES:
		terminalreporter.section("acceptance criteria")
		for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
			terminalreporter.write_line(line)
