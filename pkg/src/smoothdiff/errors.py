"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A caller supplied an argument outside an operation's contract."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (singular system, divergence, ...)."""


class DomainError(NumericalError):
    """Inputs lie outside the mathematical domain of a closed-form result."""
