"""Exception hierarchy. Each family maps onto a CLI exit code."""


class PrunekitError(Exception):
    exit_code = 1


class ConfigError(PrunekitError):
    exit_code = 2


class DataError(PrunekitError):
    exit_code = 3


class NumericError(PrunekitError, ArithmeticError):
    exit_code = 4


class InputError(PrunekitError, ValueError):
    """Bad argument to a pure function (out-of-range label, shape mismatch)."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class ValidationError(DataError):
    pass


class InsufficientHistoryError(DataError):
    pass


class MeasurementError(DataError):
    pass
