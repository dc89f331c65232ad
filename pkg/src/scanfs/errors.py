"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad configuration value, shape, or key."""


class LoadError(ValueError):
    """A data or checkpoint file could not be parsed."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where the computation cannot continue."""
