"""Exception hierarchy for the accounting engine."""


class AccountingError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(AccountingError, ValueError):
    """A numeric argument is outside its admissible range."""


class DimensionMismatchError(AccountingError, ValueError):
    pass


class InvariantError(AccountingError, ValueError):
    """A value violates a structural invariant (e.g. a distribution not summing to 1)."""


class UnsupportedOrderError(ParameterError):
    """The requested Renyi order is not supported by the operation."""


class StateError(AccountingError, RuntimeError):
    """An operation was invoked out of protocol order."""


class PreconditionError(AccountingError, ValueError):
    pass


class QueryValidationError(AccountingError, ValueError):
    """A query evaluation fell outside [0, 1]."""


class SizeLimitError(AccountingError, ValueError):
    pass


class QuadratureError(AccountingError, RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (estimated residual {residual:.3e})")
        self.residual = residual


class ConfigError(AccountingError, ValueError):
    """A CLI run configuration failed schema validation."""
