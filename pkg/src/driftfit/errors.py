"""Exception hierarchy shared by all estimation modules."""

from __future__ import annotations

from typing import Any


class DriftfitError(Exception):
    """Base class for every error raised by driftfit."""


class NotPositiveDefinite(DriftfitError):
    """A matrix expected to be SPD could not be factorized, even with jitter."""


class DimensionMismatch(DriftfitError, ValueError):
    """Array shapes are incompatible."""


class LengthMismatch(DimensionMismatch):
    """Two vectors that must be paired have different lengths."""


class TooFewSamples(DriftfitError, ValueError):
    """Not enough observations for the requested fold count."""


class InvalidData(DriftfitError, ValueError):
    """Input data contains NaN/Inf or has an invalid shape."""


class NoConvergence(DriftfitError):
    """An iterative optimizer hit its iteration budget.

    The best iterate found so far is attached as ``best`` so callers can
    decide whether to use it anyway.
    """

    def __init__(self, message: str, best: Any = None):
        super().__init__(message)
        self.best = best
