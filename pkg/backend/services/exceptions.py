"""
Domain errors raised by the deformation control services.
Routers map them to HTTP status codes and the CLI maps them to exit codes.
"""

from typing import Any, Dict, Optional


class DeformationControlError(Exception):
    """Base class for every error raised by this package."""


class InvalidSpecError(DeformationControlError, ValueError):
    """An ellipsoid or mesh specification violates its invariants."""


class InvalidMeshError(DeformationControlError, ValueError):
    """A mesh is malformed or contains inverted elements."""


class InvalidRequestError(DeformationControlError, ValueError):
    """A request is inconsistent with the data it refers to (e.g. m > 3N)."""


class InvalidPointError(DeformationControlError, ValueError):
    """A point cannot be radially projected onto the base mesh."""


class InvalidInputError(DeformationControlError, ValueError):
    """Array inputs have the wrong shape or disagree with each other."""


class DegenerateInputError(DeformationControlError, ValueError):
    """Geometric input is degenerate (zero length, collinear, ...)."""


class InsufficientDataError(DeformationControlError, ValueError):
    """Too few samples to estimate the requested quantity."""


class ConfigurationError(DeformationControlError, ValueError):
    """A scenario or plant configuration cannot be realised."""


class RankDeficientError(DeformationControlError, ValueError):
    """The feature projector does not have full row rank."""

    def __init__(self, message: str, deficient: int, rank: int, expected: int):
        super().__init__(message)
        self.deficient = deficient
        self.rank = rank
        self.expected = expected


class NumericError(DeformationControlError, ArithmeticError):
    """A numerical routine failed or produced non-finite values."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ScenarioRunError(DeformationControlError, RuntimeError):
    """A control run aborted; carries the failing tick and the cause."""

    def __init__(self, message: str, tick: int, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.tick = tick
        self.diagnostics = diagnostics or {}
