"""Exception hierarchy shared by every module."""


class CGSError(Exception):
    """Base class for all library errors."""


class DomainError(CGSError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ConfigError(CGSError, ValueError):
    """Invalid run configuration (grid sizes, unknown keys, ...)."""


class DivergenceError(CGSError):
    """An integral, norm or iteration does not converge."""


class ConditioningError(CGSError):
    """A linear system is numerically singular."""


class ResolutionError(CGSError):
    """Discretization too coarse for the requested extrapolation."""


class PositivityError(CGSError):
    """A profile expected to be positive has a non-positive node."""


class BracketError(CGSError):
    """No sign change / dichotomy found on a search interval."""


class IntegrationError(CGSError):
    """ODE integration failed."""
