"""Exception types shared across the package."""


class CarnotLabError(Exception):
    """Base class for every error raised by carnotlab."""


class BoundsError(CarnotLabError, ValueError):
    """A size parameter is outside the supported range."""


class IncompatibleError(CarnotLabError, ValueError):
    """Operands live on different bases, groups or spaces."""


class DomainError(CarnotLabError, ValueError):
    """An argument is outside the domain of the operation."""


class UnsupportedError(CarnotLabError, ValueError):
    """The requested feature is not available for this group or component."""


class ConfigError(CarnotLabError, ValueError):
    """Malformed descriptor, config file or function expression."""
