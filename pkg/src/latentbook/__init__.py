"""Latent/revealed limit order book model.

Stationary books (closed forms and a finite-difference solver), a particle
simulator, the stability map, metaorder impact and calibration to averaged
order-book snapshots.
"""

from .analytic import BookProfile, critical_zeta, max_amplitude, stationary_dr0, stationary_dreq
from .bvp import BvpConfig, solve_stationary
from .calibration import BinningConfig, EmpiricalBookProfile, FitConfig, FitResult, LatentBookRegressor, fit, ingest_snapshots
from .exceptions import (
    DegenerateBookError,
    DomainOverflow,
    FitError,
    ImpactDivergence,
    LatentBookError,
    LiquidityCrisis,
    ParameterError,
    SolverError,
    UnstableRegimeError,
)
from .impact import MetaorderSpec, dilogarithm, geometric_impact_dr0, geometric_impact_dreq, llob_reference, run_metaorder
from .model import ModelParams, derived_scales, g_factor, gamma
from .sim import SimConfig, volatility
from .stability import critical_line, locate_asset, sweep

__version__ = "0.1.0"

__all__ = [
    "BookProfile",
    "BvpConfig",
    "BinningConfig",
    "DegenerateBookError",
    "DomainOverflow",
    "EmpiricalBookProfile",
    "FitConfig",
    "FitError",
    "FitResult",
    "ImpactDivergence",
    "LatentBookError",
    "LatentBookRegressor",
    "LiquidityCrisis",
    "MetaorderSpec",
    "ModelParams",
    "ParameterError",
    "SimConfig",
    "SolverError",
    "UnstableRegimeError",
    "critical_line",
    "critical_zeta",
    "derived_scales",
    "dilogarithm",
    "fit",
    "g_factor",
    "gamma",
    "geometric_impact_dr0",
    "geometric_impact_dreq",
    "ingest_snapshots",
    "llob_reference",
    "locate_asset",
    "max_amplitude",
    "run_metaorder",
    "solve_stationary",
    "stationary_dr0",
    "stationary_dreq",
    "sweep",
    "volatility",
]
