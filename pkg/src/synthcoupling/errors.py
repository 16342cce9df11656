"""Exception types raised across the package."""


class KSCError(Exception):
    """Base class for package errors."""


class InvalidInputError(KSCError, ValueError):
    """Inputs violate a precondition (shape, sign, normalization)."""


class DivergenceUndefinedError(KSCError, ValueError):
    """KL divergence requested where the reference has a zero the other matrix does not."""


class DegenerateError(KSCError, ValueError):
    """A ratio or estimate is undefined for the given input (0/0 and similar)."""


class EmptySelectionError(KSCError, ValueError):
    """A filtering step selected no units."""


class IdentityViolationError(KSCError, ArithmeticError):
    """An aggregation identity failed, meaning marginals and coupling do not belong together."""


class SolverError(KSCError, RuntimeError):
    """A numerical routine failed."""


class PropensityOverflowError(KSCError, OverflowError):
    """A propensity score is numerically 0 or 1, so the requested weight is infinite."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
