"""Exception types shared across the package."""


class StopwalkError(Exception):
    """Base class for all package-specific errors."""


class NonPositiveDrift(StopwalkError):
    """The boundary-driving increment has E[X] <= 0."""


class SingularSigma(StopwalkError):
    """A residual covariance matrix is not positive definite within tolerance."""


class MomentsUnavailable(StopwalkError):
    """The model kind has no closed-form moments; use sample_moments instead."""


class MaxStepsExceeded(StopwalkError):
    """A walk failed to cross its boundary within the step budget."""

    def __init__(self, message: str, n_failed: int = 1, max_steps: int | None = None):
        super().__init__(message)
        self.n_failed = n_failed
        self.max_steps = max_steps


class NoLadderEpoch(StopwalkError):
    """No strict ascending ladder epoch exists in the given path."""


class InvalidCount(StopwalkError):
    """A requested sample size is not a positive integer."""


class MissingLadderMoments(StopwalkError):
    """An expansion term requires ladder moments that were not supplied."""


class WrongDimension(StopwalkError):
    """An operation restricted to scalar covariates got a multivariate context."""


class DomainError(StopwalkError):
    """An evaluation point lies outside the function's domain."""


class OutOfNeighborhood(StopwalkError):
    """A stopped point fell outside a smooth statistic's evaluable neighborhood."""


class InvalidStatistic(StopwalkError):
    """A smooth statistic failed its regularity conditions."""


class DegenerateVariance(StopwalkError):
    """The within-walk variance estimate is zero."""


class TooFewObservations(StopwalkError):
    """The stopped walk has too few steps for the requested statistic."""


class IncrementsNotRetained(StopwalkError):
    """The operation needs per-step increments but the walk discarded them."""


class NonPositiveNuHat(StopwalkError):
    """The plug-in drift estimate X_tau/tau is not positive."""


class InvalidConfig(StopwalkError):
    """An experiment configuration field is missing or malformed."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field
