"""Exception hierarchy shared across the package."""


class QocbenchError(Exception):
    pass


class ValidationError(QocbenchError, ValueError):
    """Input violates a documented precondition."""


class ConsistencyError(QocbenchError, RuntimeError):
    """An internally constructed object failed its own invariants."""


class LookupFailure(QocbenchError, LookupError):
    pass


class IllConditionedError(QocbenchError, ArithmeticError):
    """A matrix that has to be inverted is too close to singular."""


class NormalizationError(QocbenchError, RuntimeError):
    """Fluorescence contrast collapsed; the record has to be re-measured."""


class UndefinedGainError(QocbenchError, ArithmeticError):
    """Reference and guess figures of merit are too close to define a gain."""


class DegenerateColumnError(ValidationError):
    """A data column has zero variance, so its correlation is undefined."""
