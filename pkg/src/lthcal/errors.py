"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class LTHError(Exception):
    exit_code = 2


class ConfigError(LTHError, ValueError):
    exit_code = 1


class DataError(LTHError, ValueError):
    exit_code = 2


class FormatError(DataError):
    pass


class DimensionError(DataError):
    pass


class NumericError(LTHError, ArithmeticError):
    exit_code = 2


class PruneError(LTHError):
    """Raised when a layer (or the global pool) has no surviving weights left."""

    exit_code = 2


class StorageError(LTHError, OSError):
    exit_code = 3
