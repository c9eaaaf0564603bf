"""
Error types raised across the toolkit.

All of them derive from ExposureError (itself a ValueError) so callers can
catch the whole family at the command-line boundary.
"""

from typing import Any, Dict, Optional


class ExposureError(ValueError):
    """Base class for every toolkit error."""


class JudgmentMismatchError(ExposureError):
    """A ranking or vector names a document outside the judged pool."""


class EnumerationCapError(ExposureError):
    """The pool is too large to enumerate permutations exactly."""


class PolicyIntegrityError(ExposureError):
    """A policy's permutation probabilities do not sum to one."""


class DimensionError(ExposureError):
    """Two vectors are defined over different documents."""


class DegenerateNormalizationError(ExposureError):
    """Curve normalization bounds coincide."""


class InsufficientPointsError(ExposureError):
    """A curve has too few points to integrate."""


class UndefinedEntropyError(ExposureError):
    """Generalized entropy with zero mean exposure."""


class EmptyRelevanceError(ExposureError):
    """An operation needs relevant documents but every grade is zero."""


class ConfigurationError(ExposureError):
    """Invalid parameters or missing inputs for an operation."""


class DegenerateScoresError(ExposureError):
    """Retrieval scores are all zero after preprocessing."""


class DivergenceError(ExposureError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParseError(ExposureError):
    """Malformed input file."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
