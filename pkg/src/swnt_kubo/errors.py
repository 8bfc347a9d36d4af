"""Exception hierarchy shared by the library and the CLI."""


class SwntError(Exception):
    """Base class for all package errors."""


class DomainError(SwntError, ValueError):
    """Argument outside the mathematical domain of a function."""


class ValidationError(SwntError, ValueError):
    """Model or configuration violates a documented invariant."""


class ConvergenceError(SwntError, RuntimeError):
    """Iterative procedure failed to meet its tolerance."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ToleranceError(SwntError, RuntimeError):
    """A truncation cannot certify the requested accuracy."""


class CapacityError(SwntError, MemoryError):
    """Problem size exceeds the configured budget."""


class ConsistencyError(SwntError, ValueError):
    """Inputs built for incompatible models were combined."""


class StabilityError(SwntError, RuntimeError):
    """Time stepping drifted beyond its conservation tolerance."""
