"""Exception hierarchy shared by every module.

The CLI maps :class:`UsageError` subclasses to exit code 2 and
:class:`RuntimeFailure` subclasses to exit code 1.
"""


class LtcError(Exception):
    """Base class for all package errors."""


class UsageError(LtcError, ValueError):
    """Bad input supplied by the caller (exit code 2)."""


class RuntimeFailure(LtcError, RuntimeError):
    """Failure while computing on valid input (exit code 1)."""


class ShapeError(UsageError):
    pass


class ConfigError(UsageError):
    pass


class DataError(UsageError):
    pass


class ParseError(DataError):
    pass


class PersistenceError(UsageError):
    pass


class ContractError(UsageError):
    pass


class MetricError(UsageError):
    pass


class StatsError(UsageError):
    pass


class NumericError(RuntimeFailure, ArithmeticError):
    pass


class TrainingError(RuntimeFailure):
    pass
