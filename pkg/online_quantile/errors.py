"""
Exception types and command-line exit codes.

All errors derive from the built-in ``ValueError`` so callers that only know
the standard library hierarchy can still catch them.
"""

from enum import IntEnum


class DomainError(ValueError):
    """A covariate, index or value lies outside the domain an operation accepts."""


class LayoutMismatchError(ValueError):
    """Two coefficient layouts (p, J or basis family) cannot be combined."""


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or structurally invalid."""


class CheckpointMismatchError(CheckpointError):
    """A checkpoint was written under a different estimator configuration."""


class ConfigError(ValueError):
    """A run configuration failed validation."""


class MalformedRecordError(ValueError):
    """An input record could not be parsed into a sample."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
        self.reason = message


class ExitCode(IntEnum):
    """Process exit codes of the command-line tool."""

    SUCCESS = 0
    USAGE = 1
    DATA = 2
    INTERNAL = 3
    INTERRUPTED = 130
