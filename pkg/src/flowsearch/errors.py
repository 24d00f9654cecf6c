"""Exception types shared across the package."""


class FlowSearchError(Exception):
    """Base class for all package errors."""


class DomainError(FlowSearchError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class BudgetError(FlowSearchError, RuntimeError):
    """An NFE budget was misconfigured or would be exceeded."""


class ConfigError(FlowSearchError, ValueError):
    """A harness configuration document is invalid."""


class InvariantError(FlowSearchError, RuntimeError):
    """A run record or internal invariant check failed."""
