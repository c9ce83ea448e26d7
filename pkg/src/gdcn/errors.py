"""Exception hierarchy shared by every stage of the pipeline."""


class GdcnError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 1


class ConfigError(GdcnError, ValueError):
    exit_code = 2


class DataError(GdcnError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ArityError(SchemaError):
    def __init__(self, position, expected, got):
        super().__init__(
            f"record {position} has {got} columns, expected {expected}")
        self.position = position
        self.expected = expected
        self.got = got


class EncodeError(DataError):
    pass


class FormatError(DataError):
    pass


class ShapeError(GdcnError, ValueError):
    exit_code = 3


class EmbeddingLookupError(GdcnError, IndexError):
    exit_code = 3


class NumericError(GdcnError, ArithmeticError):
    exit_code = 4


class UndefinedMetricError(GdcnError, ValueError):
    exit_code = 4


class UnsupportedModeError(GdcnError, ValueError):
    exit_code = 2
