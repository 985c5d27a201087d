"""Exception hierarchy shared by every subsystem.

The CLI maps these onto process exit codes: configuration problems exit 1,
data problems exit 2 and numeric failures exit 3.
"""


class QAKTError(Exception):
    exit_code = 1


class ConfigError(QAKTError, ValueError):
    exit_code = 1


class ShapeError(QAKTError, ValueError):
    exit_code = 1


class DataError(QAKTError, ValueError):
    exit_code = 2


class FormatError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class NumericError(QAKTError, ArithmeticError):
    exit_code = 3
