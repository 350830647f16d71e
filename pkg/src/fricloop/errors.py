"""Exception types raised across the package."""


class FricloopError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(FricloopError, ValueError):
    """A constructor or operation argument violates its contract."""


class PoleOnAxisError(FricloopError, ValueError):
    """Frequency-response evaluation requested exactly on an imaginary-axis pole."""


class RateMismatchError(FricloopError, ValueError):
    """Signal and filter sample rates differ."""


class InsufficientDataError(FricloopError, ValueError):
    """Not enough samples/records to run the requested estimator."""


class InvalidTrialError(FricloopError, ValueError):
    """A gain-estimation trial is unusable (e.g. zero drive amplitude)."""


class FitFailureError(FricloopError, RuntimeError):
    """Model fit failed to converge; carries the best residual seen."""

    def __init__(self, message, best_residual=None, best_candidate=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_candidate = best_candidate


class SingularDesignError(FricloopError, ValueError):
    """Controller synthesis has no solution (e.g. zero actuation gain)."""


class DegeneracyError(FricloopError, ValueError):
    """Exact pole-zero degeneracy made a closed-loop result improper."""


class DesignRejectedError(FricloopError, RuntimeError):
    """No stable discrete controller found within the tuning budget."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ActuationError(FricloopError, ValueError):
    """Non-finite control current passed to the plant."""


class ConfigError(FricloopError, ValueError):
    """Plant or experiment configuration violates an invariant."""


class AlignmentError(FricloopError, ValueError):
    """Cross-correlation alignment is undefined for the given signals."""


class UndefinedMetricError(FricloopError, ValueError):
    """A tracking metric is undefined (e.g. zero-variance reference)."""
