"""Exception hierarchy shared by the photogeom modules."""

from __future__ import annotations


class PhotogeomError(Exception):
    """Base class for all library errors."""


class NotHSClassError(PhotogeomError, ValueError):
    """An operator without finite Hilbert-Schmidt norm was used where one is required."""


class DegeneratePOVMError(PhotogeomError, ArithmeticError):
    """The restricted covariant metric is singular or numerically rank deficient."""

    def __init__(self, message: str, condition_number: float):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number


class InconsistentMetricError(PhotogeomError, ArithmeticError):
    """A mismatch radicand came out negative beyond round-off tolerance."""


class RankDeficientError(PhotogeomError, ArithmeticError):
    """Pseudoinversion was requested for a matrix without full row rank."""

    def __init__(self, message: str, singular_values):
        super().__init__(message)
        self.singular_values = singular_values


class TailMassError(PhotogeomError, ValueError):
    """A truncated probability vector leaves too much mass outside the window."""


class NotApplicableError(PhotogeomError, ValueError):
    """A numerical cross-check cannot be carried out for the given inputs."""


class ConditioningWarning(UserWarning):
    """Emitted when a metric inversion is badly conditioned."""
