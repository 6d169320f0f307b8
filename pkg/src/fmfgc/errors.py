"""Exception types shared across the package.

Everything derives from :class:`FmfgcError` so callers can catch the whole
family; most types also subclass ``ValueError`` because they signal bad
inputs in the usual Python sense.
"""

from __future__ import annotations


class FmfgcError(Exception):
    """Base class for all package-specific errors."""


class InvalidFieldError(FmfgcError, ValueError):
    """A field contains NaN or infinite entries."""


class GridMismatchError(FmfgcError, ValueError):
    """Field shape does not match the grid it is used with."""


class InvalidMeasureError(FmfgcError, ValueError):
    """A grid measure violates nonnegativity or normalization."""


class MassMismatchError(FmfgcError, ValueError):
    """Two measures that must carry equal mass do not."""


class DegenerateMeasureError(FmfgcError, ValueError):
    """A support query found no nodes above the threshold."""


class ConvergenceError(FmfgcError, RuntimeError):
    """An iterative routine exhausted its budget.

    The last defect is kept on ``residual`` for post-mortems.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class NonContractionError(ConvergenceError):
    """Fixed-point updates stopped shrinking; carries the observed ratio."""

    def __init__(self, message: str, ratio: float, residual: float | None = None):
        super().__init__(message, residual)
        self.ratio = ratio


class OptimizationError(ConvergenceError):
    """A pointwise optimizer (Newton plus fallback) failed to meet tolerance."""


class CflError(FmfgcError, ValueError):
    """Transport stability condition violated.

    ``required_steps`` is the smallest step count that would satisfy it.
    """

    def __init__(self, message: str, required_steps: int):
        super().__init__(message)
        self.required_steps = required_steps


class BlowUpError(FmfgcError, RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message: str, time_index: int):
        super().__init__(message)
        self.time_index = time_index


class ConservationError(FmfgcError, RuntimeError):
    """Mass conservation was broken beyond the allowed drift."""


class FormatError(FmfgcError, ValueError):
    """An artifact file is malformed or truncated."""


class ConfigError(FmfgcError, ValueError):
    """A run configuration file failed validation."""
