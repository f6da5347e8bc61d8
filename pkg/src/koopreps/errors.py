"""Exception hierarchy shared by every module.

The CLI maps each family onto an exit code (usage 2, parse 3, numerical 4).
"""
from __future__ import annotations


class KoopRepsError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ArgumentError(KoopRepsError, ValueError):
    """Bad shapes, out-of-range parameters, missing classes."""

    exit_code = 2


class UsageError(KoopRepsError, RuntimeError):
    """API misuse, e.g. replaying a consumed gradient tape."""

    exit_code = 2


class ConfigError(ArgumentError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(KoopRepsError):
    """Malformed on-disk data."""

    exit_code = 3


class BadMagicError(ParseError):
    pass


class TruncatedFileError(ParseError):
    pass


class CountMismatchError(ParseError):
    pass


class NumericalError(KoopRepsError, ArithmeticError):
    """Factorizations, convergence, and non-finite results."""

    exit_code = 4


class NotInvertibleError(NumericalError):
    pass


class TrainingError(NumericalError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        super().__init__(message)


class ResourceError(KoopRepsError, MemoryError):
    exit_code = 4
