"""Bayesian parametric survival analysis with M-spline hazards.

Core pieces: a flexible baseline hazard built from M-splines with a
hierarchical smoothing prior, proportional and non-proportional covariate
effects, MAP/Laplace and NUTS-based MCMC inference, posterior estimands
(survival, hazard ratios, restricted mean survival time), a simulation
engine with closed-form and spline-based data-generating mechanisms, and a
performance-metrics harness for simulation studies.
"""

from .basis import BasisError, CalibrationError, SplineConfig, make_knots
from .model import LogPosterior, ModelSpec, ParamVector, SurvivalDataset

__version__ = "0.1.0"

__all__ = [
    "BasisError",
    "CalibrationError",
    "SplineConfig",
    "make_knots",
    "LogPosterior",
    "ModelSpec",
    "ParamVector",
    "SurvivalDataset",
    "__version__",
]
