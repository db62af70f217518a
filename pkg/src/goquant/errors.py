"""Exception taxonomy shared by the whole package.

The CLI maps these onto its exit-code contract: DataError and FormatError
exit 2, NumericError exits 3, usage problems exit 1.
"""


class GoQuantError(Exception):
    """Base class for all package errors."""


class DataError(GoQuantError, ValueError):
    """Invalid user-supplied data: bad shapes, NaNs, empty inputs."""


class FormatError(GoQuantError, ValueError):
    """Malformed serialized artifacts.

    `code` is a stable machine-readable reason ("bad_magic", "bad_version",
    "eof", ...) so callers can distinguish corruption modes without parsing
    the message.
    """

    def __init__(self, message, code="format"):
        super().__init__(message)
        self.code = code


class NumericError(GoQuantError, ArithmeticError):
    """Numeric failures: accumulator overflow, non-finite intermediates."""
