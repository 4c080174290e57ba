"""Exception types shared across the package."""


class WhmcError(Exception):
    """Base class for package-specific failures."""


class ConfigError(WhmcError, ValueError):
    """Invalid configuration file or field."""


class DomainError(WhmcError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericsError(WhmcError, RuntimeError):
    """Quadrature or root-finding failed to reach the requested accuracy."""


class TruncationError(WhmcError, RuntimeError):
    """A truncated series or table cannot hold the requested probability mass."""


class DivergenceError(WhmcError, RuntimeError):
    """A quantity has no finite value under the given parameters."""


class ReducibleChainError(WhmcError, ValueError):
    """Markov chain is not irreducible; carries the offending states."""

    def __init__(self, message: str, states=()):
        super().__init__(message)
        self.states = tuple(states)


class InsufficientDataError(WhmcError, ValueError):
    """Estimation was asked to run on too little data."""


class StarvationError(WhmcError, RuntimeError):
    """Simulation produced no qualifying events within its step budget."""


class UnboundedRegionError(WhmcError, RuntimeError):
    """A stability-region boundary search ran off the usable bracket."""
