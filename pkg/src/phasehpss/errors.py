"""Exception hierarchy.

Every error raised on purpose by this package derives from ``HpssError``.
The CLI maps the three families below onto its exit codes.
"""


class HpssError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgumentError(HpssError, ValueError):
    """An argument violates an operation's precondition."""

    exit_code = 2


class ConfigError(HpssError):
    exit_code = 2


class DataError(HpssError):
    """Missing or inconsistent audio / dataset input."""

    exit_code = 3


class NumericError(HpssError, ArithmeticError):
    """Numerical degeneracy (zero window power, non-finite loss, ...)."""

    exit_code = 4


class TrainingError(NumericError):
    """Training diverged; ``diagnostics`` holds the step and loss history."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
