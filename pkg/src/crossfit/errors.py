"""Exception hierarchy shared by all crossfit modules."""

from __future__ import annotations


class CrossfitError(Exception):
    """Base class for every error raised by this package."""


class InputError(CrossfitError, ValueError):
    """Malformed argument: wrong dimension, out-of-range parameter, ..."""


class ParseError(InputError):
    """A body or configuration document failed validation.

    ``path`` is the JSON location of the offending field, e.g. ``"$.semi_axes[2]"``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class PreconditionError(CrossfitError):
    """A documented precondition does not hold (e.g. origin outside the body)."""


class InteriorLostError(PreconditionError):
    """The chord-form iteration kept leaving the body interior."""


class NoIntersectionError(CrossfitError):
    """A ray never reaches the surface before the bracket cap."""


class UnsupportedFormError(CrossfitError):
    """The requested residual form does not apply to this body."""


class UnsupportedDimensionError(CrossfitError):
    pass


class BudgetError(CrossfitError):
    """A brute-force grid would exceed the evaluation budget."""


class DegenerateFamilyError(CrossfitError):
    """A blended body lost its interior point."""


class NonConvergenceError(CrossfitError):
    """Iteration limit reached; ``best`` holds the lowest-residual iterate."""

    def __init__(self, message: str, best=None, residual_norm: float = float("nan")):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm


class DegenerationError(CrossfitError):
    """The crosspolytope scale collapsed below ``lambda_min``."""

    def __init__(self, message: str, config=None, trace=None):
        super().__init__(message)
        self.config = config
        self.trace = trace


class ContinuationStuckError(CrossfitError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
