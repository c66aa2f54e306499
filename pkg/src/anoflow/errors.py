"""Exception types shared across the toolkit.

Exit-code mapping used by the CLI: verification failures (a computed
certificate does not hold) map to exit code 2, numerical failures
(divergence, singular systems, non-convergence) map to exit code 3.
"""


class AnoflowError(Exception):
    """Base class for all toolkit errors."""


class VerificationError(AnoflowError):
    """A sampled certificate or invariant check failed."""

    exit_code = 2


class NumericalError(AnoflowError):
    """A numerical procedure failed (divergence, singularity, ...)."""

    exit_code = 3


class NotUniformlyHyperbolicError(NumericalError):
    """Power iteration for the invariant splitting did not converge."""


class DegenerateFrameError(NumericalError):
    """Frame angles fell below the admissible floor."""


class GridRefinementError(NumericalError):
    """A gap constant came out non-positive; the sampling grid is too coarse."""


class ContourCrossingError(NumericalError):
    """A resonance crossed the tracking contour between parameter steps."""


class DiscretizationError(NumericalError):
    """The operator truncation failed where the model predicts invertibility."""
