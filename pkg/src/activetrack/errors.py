"""Exception types shared across the package."""


class ActiveTrackError(Exception):
    """Base class for package errors."""


class InfeasibleGeometry(ActiveTrackError):
    """Requested manifold geometry cannot exist in the given dimension."""


class DegenerateSum(ActiveTrackError):
    """Prototype aggregation collapsed to (near) zero norm."""


class ZeroVector(ActiveTrackError):
    """Cosine similarity requested against a (near) zero vector."""


class AssumptionViolated(ActiveTrackError):
    """A manifold set failed its own cohesion/separation certification."""


class SingularInnovation(ActiveTrackError):
    """Kalman innovation covariance is numerically singular."""


class SamplingExhausted(ActiveTrackError):
    """Scenario rejection sampling hit its retry budget."""


class NoPath(ActiveTrackError):
    """Grid search found no route between the requested cells."""


class NonFiniteLoss(ActiveTrackError):
    """Training loss became NaN/inf."""

    def __init__(self, message, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id


class NonFiniteOutput(ActiveTrackError):
    """Sampled trajectory contains NaN/inf."""


class EmptyLogs(ActiveTrackError):
    """Metrics requested over an empty episode collection."""


class NoEligibleSteps(ActiveTrackError):
    """Correct-action rate requested but every step sits in the dead zone."""
