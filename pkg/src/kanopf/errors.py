"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError
subclasses -> 3, DataFileError -> 4.
"""


class KanopfError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(KanopfError, ValueError):
    """A vector/matrix dimension does not match its contract.

    Raised instead of letting numpy broadcast silently.
    """


class DomainError(KanopfError, ValueError):
    """An input value is outside the mathematical domain (NaN, inf, ...)."""


class ConfigError(KanopfError, ValueError):
    """A configuration file or option is invalid; message carries the key path."""


class NumericError(KanopfError, RuntimeError):
    """Base class for numeric failures (divergence, infeasibility)."""


class PowerFlowDivergedError(NumericError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class SingularJacobianError(NumericError):
    pass


class DisconnectedSystemError(NumericError):
    """The in-service network graph is not connected."""


class InfeasibleError(NumericError):
    """OPF could not drive constraint violations below tolerance."""

    def __init__(self, message, worst_violation=None):
        super().__init__(message)
        self.worst_violation = worst_violation


class TrainingDivergedError(NumericError):
    """Training loss became non-finite; `step` records where."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DataFileError(KanopfError, OSError):
    """A dataset/model/case file is missing or malformed."""
