"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class ConfigError(ValueError):
    """Invalid run or model configuration."""


class DataError(IOError):
    """Malformed or missing input data."""
