"""Exceptions raised by the market-clearing solvers.

Every domain failure is a ``ValueError`` so callers that only care about
bad input can catch a single class.
"""

from typing import List, Optional


class MarketModelError(ValueError):
    """Base class for all domain errors."""


class InvalidModelError(MarketModelError):
    """A model instance violates a structural invariant."""


class AdaptednessError(MarketModelError):
    """A process is not measurable with respect to the lattice filtration."""


class ShapeError(MarketModelError):
    """Array shapes or grids do not line up."""


class CapacityError(MarketModelError):
    """A size guard was exceeded."""


class DegenerateParameterError(MarketModelError):
    """A closed form is undefined for the given parameters."""


class UnsupportedFamilyError(MarketModelError):
    """The requested distribution or coefficient family is not supported."""


class DomainError(MarketModelError):
    """An argument lies outside the domain of a function."""


class NonConvergenceError(MarketModelError):
    def __init__(self, message: str, residual_history: List[float]):
        super().__init__(message)
        self.residual_history = list(residual_history)


class SingularJacobianError(MarketModelError):
    def __init__(
        self, message: str, condition_estimate: Optional[float] = None
    ):
        super().__init__(message)
        self.condition_estimate = condition_estimate
