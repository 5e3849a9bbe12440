"""Exception hierarchy shared by all latentbook modules."""


class LatentBookError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(LatentBookError, ValueError):
    """Invalid or inconsistent model / configuration parameters."""


class UnstableRegimeError(LatentBookError):
    """The requested quantity only exists below the critical line."""


class SolverError(LatentBookError):
    """The stationary boundary-value solver failed."""


class LiquidityCrisis(LatentBookError):
    """One side of the revealed book is empty, so no trade price exists."""


class DegenerateBookError(LatentBookError):
    """No crossing of cumulative supply and demand (fair price undefined)."""


class DomainOverflow(LatentBookError):
    """The simulated price reached the edge of the price grid."""


class ImpactDivergence(LatentBookError):
    """Executed volume exceeds what the static revealed book can absorb."""


class FitError(LatentBookError):
    """Calibration did not converge or the input profile is degenerate."""
