"""Partial identification bounds for random coefficient panel models."""

from .dgp import Ar1DGP, DiscreteDGP, make_rng, sample_panel
from .errors import InputError, NumericalError, PanelBoundsError
from .mean_bounds import BoundsResult, baseline_bounds, homogeneous_bounds, refined_bounds, smoothed_bounds
from .panel import (
	InstrumentSpec, PanelDataset, PanelSchema, Window, build_instruments, load_panel_csv, moment_summary,
)

__version__ = "0.1.0"

__all__ = [
	"Ar1DGP", "DiscreteDGP", "make_rng", "sample_panel", "InputError", "NumericalError", "PanelBoundsError",
	"BoundsResult", "baseline_bounds", "homogeneous_bounds", "refined_bounds", "smoothed_bounds", "InstrumentSpec",
	"PanelDataset", "PanelSchema", "Window", "build_instruments", "load_panel_csv", "moment_summary",
]
