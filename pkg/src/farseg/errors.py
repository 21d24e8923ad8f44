"""Exception types. Each maps to a CLI exit code."""


class FarSegError(Exception):
    exit_code = 1


class ConfigError(FarSegError, ValueError):
    exit_code = 2


class DataError(FarSegError, ValueError):
    exit_code = 3


class NumericError(FarSegError, FloatingPointError):
    exit_code = 4


class DimensionError(ValueError):
    """Tensor has the wrong shape for the requested operation."""
