"""Exception types shared across the package.

Each error kind maps to one failure mode of the numerical contracts; callers
that want blanket handling can catch StccaError.
"""


class StccaError(Exception):
    """Base class for all package-specific errors."""


class EmptyInputError(StccaError, ValueError):
    """A data matrix with zero rows was supplied."""


class InsufficientDataError(StccaError, ValueError):
    """Fewer rows than the estimator needs (e.g. Kendall tau wants n >= 2)."""


class DimensionMismatchError(StccaError, ValueError):
    """Matrix/vector shapes are inconsistent."""


class DomainError(StccaError, ValueError):
    """A scalar argument is outside its mathematical domain."""


class UndefinedQuotientError(StccaError, ArithmeticError):
    """theta' B theta <= 0: the Rayleigh quotient is undefined there."""


class NotPositiveDefiniteError(StccaError, ValueError):
    """A matrix required to be positive definite failed its factorization."""


class EmptySampleError(StccaError, RuntimeError):
    """No usable posterior samples (chain never at the cold temperature post burn-in)."""


class DegenerateEstimateError(StccaError, RuntimeError):
    """A point estimate collapsed to zero and cannot be normalized."""


class UndefinedRateError(StccaError, ValueError):
    """TPR/TNR undefined: the truth has no positives or no negatives."""


class ConfigError(StccaError, ValueError):
    """An experiment configuration failed validation."""
