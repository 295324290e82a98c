"""Exception hierarchy shared by every module."""

from __future__ import annotations


class RieszError(Exception):
    """Base class for all package errors."""


class DataError(RieszError, ValueError):
    """Malformed, non-finite or otherwise invalid input data."""


class DomainError(RieszError, ValueError):
    """A function was evaluated at points of the wrong dimension."""


class ConfigurationError(RieszError, ValueError):
    """Inconsistent or out-of-range configuration."""


class UnsupportedFunctionalError(RieszError, ValueError):
    """The functional cannot be handled by the requested backend."""


class NumericError(RieszError, ArithmeticError):
    """Numerical failure such as overflow or a singular system."""


class LinAlgError(NumericError):
    """A linear system stayed singular after regularisation."""

    def __init__(self, message: str, condition_number: float | None = None):
        if condition_number is not None:
            message = f"{message} (condition number ~ {condition_number:.3e})"
        super().__init__(message)
        self.condition_number = condition_number


class OracleError(RieszError, RuntimeError):
    """A player oracle returned an unusable function."""


class LearnerError(RieszError, RuntimeError):
    """A nuisance learner failed on a cross-fitting fold."""

    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"nuisance learner failed on fold {fold}: {cause}")
        self.fold = fold
        self.cause = cause


class WeakIdentificationError(RieszError, ArithmeticError):
    """A ratio denominator is not bounded away from zero."""
