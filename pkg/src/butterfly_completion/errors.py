"""Exception types raised by the library."""
from __future__ import annotations


class ButterflyError(Exception):
    """Base class for library errors."""


class DataFormatError(ButterflyError, ValueError):
    """Malformed input file or inconsistent observed-entry data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateEntryError(DataFormatError):
    pass


class NonFiniteError(ButterflyError, FloatingPointError):
    pass


class DivergenceError(ButterflyError, RuntimeError):
    """Optimizer aborted because the training error blew up.

    The partial convergence report is attached as ``report``.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
