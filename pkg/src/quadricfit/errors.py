"""Exception types shared across the package."""

from __future__ import annotations


class QuadricFitError(Exception):
    """Base class for all quadricfit errors."""


class InvalidInputError(QuadricFitError, ValueError):
    """Input value violates a documented precondition."""


class NotAnEllipseError(QuadricFitError, ValueError):
    """A conic does not describe a real, non-degenerate ellipse.

    Attributes:
        signature: (n_pos, n_neg, n_zero) eigenvalue signature of the full
            conic matrix, for diagnosing what the conic actually is.
    """

    def __init__(self, message: str, signature: tuple[int, int, int]):
        super().__init__(f"{message} (eigen signature {signature})")
        self.signature = signature


class DegenerateProjectionError(QuadricFitError, ValueError):
    """A quadric projected to a numerically zero or non-elliptic conic."""


class NoFiniteCenterError(QuadricFitError, ValueError):
    """The 3x3 block of a quadric is singular, so no finite center exists."""


class MissingCameraError(QuadricFitError, LookupError):
    """An observation references a frame with no camera projection."""


class InsufficientViewsError(QuadricFitError, ValueError):
    """Too few observations of an object for the requested solver."""


class NormalizationError(QuadricFitError, ValueError):
    """A dual-quadric vector cannot be normalized by its last element."""


class InitializationError(QuadricFitError, ValueError):
    """The regularized solver could not build a starting point."""


class DegenerateMaskError(QuadricFitError, ValueError):
    """A binary mask has too few or collinear foreground pixels."""
