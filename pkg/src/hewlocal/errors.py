"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of a routine."""


class PreconditionError(ValueError):
    """A stated feasibility condition of a bound or recursion does not hold."""


class ConfigurationError(ValueError):
    """Inconsistent or unsupported configuration."""


class NumericalError(ArithmeticError):
    """Non-finite values encountered during a computation."""


class ParseError(ValueError):
    """A data file does not match its expected binary or text layout."""
