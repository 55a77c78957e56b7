"""Exception hierarchy for the growup package.

Every error raised deliberately by this package derives from GrowupError,
so callers can catch one type at the CLI boundary and turn it into an
exit code.  Errors carry enough state (times, radii, residuals) to be
reported without re-running the computation.
"""


class GrowupError(Exception):
    """Base class for all deliberate failures in this package."""


class ConfigError(GrowupError):
    """Invalid configuration: bad shapes, unknown keys, out-of-range values."""


class HyperbolicityError(GrowupError):
    """Spectrum touches the imaginary axis; the splitting is not exponential."""


class RangeOverflowError(GrowupError):
    """A propagator was requested far enough out to overflow double precision."""


class IllConditionedError(GrowupError):
    """A linear solve was too ill-conditioned for its certificate to hold."""


class IntegrationError(GrowupError):
    """Time stepping produced a non-finite state.

    last_time is the most recent time at which the state was still finite.
    """

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class EnvelopeViolation(GrowupError):
    """A runtime a-priori bound failed along a computed trajectory."""

    def __init__(self, message, time=None, observed=None, allowed=None):
        super().__init__(message)
        self.time = time
        self.observed = observed
        self.allowed = allowed


class DomainExitError(GrowupError):
    """A backward solve left its declared domain box."""

    def __init__(self, message, exit_time=None):
        super().__init__(message)
        self.exit_time = exit_time


class FiberSolveError(GrowupError):
    """A shooting solve for a backward fiber did not converge."""


class NonContractionError(GrowupError):
    """An iteration expected to contract failed to do so."""


class InconclusiveError(GrowupError):
    """A trajectory classification could not be settled within the horizon."""
