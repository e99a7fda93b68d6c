"""Exception hierarchy.

Every error carries a ``code`` used by the command line front end to map
failures onto exit statuses (2 for input problems, 3 for numerical ones).
"""

from __future__ import annotations


class PanelBoundsError(Exception):
	"""Base class for all package errors."""

	code = 4

	def __init__(self, message: str = "", **details):
		super().__init__(message)
		self.details = details

	def to_dict(self) -> dict:
		return {"error": type(self).__name__, "message": str(self), "details": _jsonable(self.details)}


def _jsonable(obj):
	if isinstance(obj, dict):
		return {str(k): _jsonable(v) for k, v in obj.items()}
	if isinstance(obj, (list, tuple)):
		return [_jsonable(v) for v in obj]
	if hasattr(obj, "tolist"):
		return obj.tolist()
	return obj


class InputError(PanelBoundsError):
	code = 2


class NumericalError(PanelBoundsError):
	code = 3


# ---- ingestion / data model
class ParseError(InputError):
	pass


class BalanceError(InputError):
	pass


class DuplicateError(InputError):
	pass


class ConfigError(InputError):
	pass


class RankDeficiencyError(InputError):
	pass


class SingularDesignError(NumericalError):
	pass


# ---- bounds
class InstrumentCollinearityError(NumericalError):
	pass


class HomoCollinearityError(NumericalError):
	pass


class Assumption7Violation(InputError):
	pass


class EmptySideError(InputError):
	pass


# ---- optimisation
class MaxIterationsError(NumericalError):
	pass


class DivergingMultiplierError(NumericalError):
	pass


class InfeasibleRelaxationError(NumericalError):
	pass


# ---- inference
class BootstrapInstabilityError(NumericalError):
	pass


class GridTooSmallError(InputError):
	pass


class AnchorError(NumericalError):
	pass


# ---- linear programming / enumeration
class InfeasibleError(NumericalError):
	pass


class InfeasibleSharpSet(InfeasibleError):
	pass


class UnboundedError(NumericalError):
	pass


class IterationLimitError(NumericalError):
	pass


class EnumerationLimitError(InputError):
	pass
