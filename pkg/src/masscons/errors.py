"""Exception types shared across the package."""


class MassconsError(Exception):
    """Base class for all package-specific errors."""


class DomainError(MassconsError, ValueError):
    """A point or radius lies outside the region where an operation is defined."""


class ContractError(MassconsError, ValueError):
    """Arguments violate an interface contract (arity, coverage, consistency)."""


class ConfigurationError(MassconsError, ValueError):
    """Invalid configuration value or configuration file."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateDirectionError(MassconsError, ArithmeticError):
    """The search direction has no horizontal content; no step length exists."""


class SingularSystemError(MassconsError, ArithmeticError):
    """The collocation matrix is identically zero / has no nonzero singular values."""
