"""
Exception hierarchy for the time-series intrusion detection toolkit.

Library code raises these; only main.py turns them into exit codes.
"""

from typing import Optional


class TsidsError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ValidationError(TsidsError, ValueError):
    """Input values or configuration are invalid."""

    exit_code = 2


class ParseError(ValidationError):
    """A packet-event or feature record could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ValidationError):
    """A simulation or run configuration is inconsistent."""


class SizeError(ValidationError):
    """A series is too short for the requested operation."""


class ThresholdError(ValidationError):
    """A detection threshold cannot be derived from the given data."""


class NumericError(TsidsError, ArithmeticError):
    """Numerical failure: degenerate series, singular systems."""

    exit_code = 3


class FitError(NumericError):
    """Gradient descent did not converge."""


class TrainingError(NumericError):
    """LSTM training produced a non-finite loss."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
