"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its valid range."""


class NumericError(ArithmeticError):
    """A computation produced an unusable value (factorization failure, underflow, NaN)."""


class ConfigError(ValueError):
    """A configuration file or key is malformed."""
