"""Exception hierarchy shared by every module."""


class AirsenseError(Exception):
    """Base class for errors raised by this package."""

    category = "error"


class DomainError(AirsenseError, ValueError):
    """An argument is outside the domain of the operation."""

    category = "domain"


class DegenerateInputError(DomainError):
    """Input is well-formed but degenerate (zero variance, empty pool, ...)."""

    category = "degenerate"


class ConfigError(DomainError):
    """A configuration violates one of its invariants."""

    category = "validation"


class InsufficientDataError(AirsenseError, ValueError):
    """Not enough trace data to compute the requested statistic."""

    category = "insufficient-data"


class ResourceError(AirsenseError):
    """The requested computation would exceed the memory budget."""

    category = "resource"


class ParseError(AirsenseError, ValueError):
    """Malformed input file."""

    category = "parse"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
