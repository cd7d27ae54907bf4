"""Exception hierarchy shared by every bodykit module."""

from __future__ import annotations


class BodykitError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(BodykitError, ValueError):
    """Inputs have the wrong shape, dimension or range."""


class NumericError(BodykitError, ArithmeticError):
    """Non-finite values encountered in inputs or during computation."""


class ModelFormatError(BodykitError, ValueError):
    """A model or data file is malformed or violates a model invariant."""


class DegenerateConfigurationError(NumericError):
    """A geometric problem is rank deficient.

    Attributes:
        rank: numerical rank of the offending matrix, when known.
    """

    def __init__(self, message: str, rank: int | None = None):
        super().__init__(message)
        self.rank = rank


class UnsupportedOperationError(BodykitError):
    """The requested operation needs data the model does not carry."""


class DisconnectedMeshError(BodykitError, ValueError):
    """Mesh graph has more than one connected component."""

    def __init__(self, message: str, components: list[list[int]]):
        super().__init__(message)
        self.components = components


class EmptyCropError(BodykitError, ValueError):
    """No points fell inside the crop cube."""

    def __init__(self, message: str, bounds):
        super().__init__(message)
        self.bounds = bounds


class FitError(NumericError):
    """Optimization aborted, e.g. on a NaN objective."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped before meeting its tolerance."""
