"""Exception hierarchy. Each top-level class maps to one CLI exit code."""


class GvectorError(Exception):
    """Base class for all package errors."""

    category = "error"
    exit_code = 1


class ConfigError(GvectorError, ValueError):
    category = "config_error"
    exit_code = 2


class DataError(GvectorError, ValueError):
    category = "data_error"
    exit_code = 3


class DivergenceError(GvectorError, ArithmeticError):
    category = "numeric_divergence"
    exit_code = 4


class MalformedHeaderError(DataError):
    pass


class MalformedLineError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class DuplicateIdError(DataError):
    pass


class NonFiniteError(DataError):
    pass


class EmptySetError(DataError):
    pass


class ZeroNormError(DataError):
    pass


class UnknownIdError(DataError):
    pass
