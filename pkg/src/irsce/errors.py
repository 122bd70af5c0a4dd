"""Exception types shared across the package."""


class InvalidCorrelationError(ValueError):
    """Correlation scalar with modulus >= 1."""


class InvalidMatrixError(ValueError):
    """Matrix fails a structural requirement (Hermitian, PSD, ...)."""


class InvalidGeometryError(ValueError):
    """Non-physical distance or placement geometry."""


class InfeasibleScheduleError(ValueError):
    """Requested pilot/reflection schedule is shorter than the scheme allows."""


class PreconditionError(ValueError):
    """An estimator was fed inputs violating its documented preconditions."""


class NumericalConditioningError(RuntimeError):
    """A linear solve failed because a matrix is singular or near-singular."""


class DegenerateChannelError(RuntimeError):
    """A channel draw produced a rank-deficient system (probability-zero event)."""


class UndefinedMetricError(ValueError):
    """Metric denominator is zero (degenerate all-zero channels)."""


class ConfigError(ValueError):
    """Scenario configuration is unparseable or violates a constraint."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")
