"""Robust subspace recovery with the subspace-constrained Tyler's estimator."""
from .core import (
    ScatterEstimate,
    Spectrum,
    Subspace,
    center,
    principal_angle,
    sym_evd,
)
from .estimators import (
    DEFAULT_GAMMAS,
    EstimatorResult,
    RansacConfig,
    SteConfig,
    fit_subspace,
    fms,
    ransac_budget,
    ransac_subspace,
    ste,
    ste_tuned,
    ste_weights,
    tme,
    tune_gamma,
)

__version__ = "0.1.0"
