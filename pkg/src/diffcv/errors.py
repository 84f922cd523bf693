"""Exception types shared across the library."""


class DiffcvError(Exception):
    """Base class for all library errors."""


class UnstableNoiseError(DiffcvError):
    """Mean-reversion matrix has an eigenvalue with non-positive real part,
    or the associated linear solve is rank-deficient."""


class FactorizationError(DiffcvError):
    """Covariance matrix is numerically indefinite and cannot be factored."""


class NoCrossingError(DiffcvError):
    """Collision sub-step requested for a step that never crosses the barrier."""


class InsufficientSamplesError(DiffcvError):
    """An estimator needs at least two samples."""


class DegenerateFitError(DiffcvError):
    """Log-log slope fit received a zero or negative variance."""


class UnstableConfigurationError(DiffcvError):
    """A solver or stepper configuration violates its stability constraint."""


class ConfigError(DiffcvError):
    """Run configuration failed to parse or validate.

    ``violations`` lists every problem found, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
