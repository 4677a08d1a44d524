"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line interface:
1 for usage/config problems, 2 for data/format problems, 3 for numeric or
convergence failures.
"""

from __future__ import annotations


class FusecalError(Exception):
    exit_code = 2


class ConfigError(FusecalError, ValueError):
    exit_code = 1


class ShapeError(FusecalError, ValueError):
    pass


class OutOfBoundsError(FusecalError, IndexError):
    pass


class RangeError(FusecalError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateInputError(FusecalError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class FormatError(FusecalError, ValueError):
    """Malformed file. ``reason`` is a short tag such as ``"magic"`` or ``"length"``."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class UnknownItemError(FusecalError, KeyError):
    def __init__(self, item_id: str, line: int | None = None):
        msg = f"unknown item id {item_id!r}"
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)
        self.item_id = item_id
        self.line = line

    def __str__(self) -> str:
        return self.args[0]


class KindError(FusecalError, TypeError):
    pass


class EmptyDatabaseError(FusecalError, ValueError):
    pass


class InsufficientDataError(FusecalError, ValueError):
    pass


class InsufficientClassesError(InsufficientDataError):
    pass


class ConstraintError(FusecalError, ValueError):
    pass


class ConvergenceError(FusecalError, ArithmeticError):
    exit_code = 3

    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class FlaggedCalibratorError(FusecalError, ValueError):
    exit_code = 3


class ScorerError(FusecalError, RuntimeError):
    """An expensive-score callback failed on ``pair`` = (query, database)."""

    exit_code = 3

    def __init__(self, pair: tuple[int, int], cause: BaseException):
        super().__init__(f"scorer failed on pair {pair}: {cause!r}")
        self.pair = pair


class TestLabelAccessError(FusecalError, RuntimeError):
    """A test-split identity label was read before final evaluation."""

    __test__ = False
    exit_code = 3


class IoError(FusecalError, OSError):
    pass
