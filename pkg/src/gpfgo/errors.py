"""Exception types raised across the estimator."""


class GpfgoError(Exception):
    """Base class for all package errors."""


class PreconditionError(GpfgoError, ValueError):
    """An argument violates a documented precondition."""


class OutOfBracketError(PreconditionError):
    """Query time lies outside the bracketing knot interval."""


class DegenerateIntervalError(PreconditionError):
    """Knot interval has non-positive length."""


class OutOfSpanError(PreconditionError):
    """A measurement time falls outside the knot span."""

    def __init__(self, t_meas, t_first, t_last):
        self.t_meas = t_meas
        super().__init__(
            f"measurement at t={t_meas!r} outside knot span [{t_first!r}, {t_last!r}]")


class SingularGeometryError(GpfgoError, ArithmeticError):
    """Receiver position coincides (within 1 m) with a satellite."""


class LinearizationError(GpfgoError, ArithmeticError):
    """A factor produced a non-finite residual or Jacobian."""

    def __init__(self, factor_index, kind, reason="non-finite residual"):
        self.factor_index = factor_index
        self.kind = kind
        super().__init__(f"factor {factor_index} ({kind}): {reason}")


class SolverError(GpfgoError, RuntimeError):
    """The nonlinear solver could not proceed."""


class InvalidModelError(GpfgoError, ValueError):
    """A noise or mixture model is malformed."""


class InsufficientDataError(GpfgoError, ValueError):
    """Too few samples for the requested fit."""


class NumericalFailureError(GpfgoError, ArithmeticError):
    """An iterative fit produced non-finite quantities."""


class DegenerateLabelsError(GpfgoError, ValueError):
    """Training data contains a single class."""


class DimensionMismatchError(GpfgoError, ValueError):
    """Feature dimension does not match the model."""


class ConfigError(GpfgoError, ValueError):
    """A configuration file or value is invalid."""
