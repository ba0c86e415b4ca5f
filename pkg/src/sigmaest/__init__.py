"""Sigma-point filtering, smoothing and parameter estimation for state-space models."""
from . import baselines, cubature, estimate, gauss, kernels, models
from .cubature import CubatureRule, build_rule, expect, parse_scheme, point_count
from .gauss import GaussState, NumericalBreakdown, filter_pass, pairwise_joint, rts_pass
from .models import CTModel, LinearGaussianModel, UNGMModel, ct_model, simulate, ungm_model

__version__ = "0.1.0"

__all__ = [
    "CTModel",
    "CubatureRule",
    "GaussState",
    "LinearGaussianModel",
    "NumericalBreakdown",
    "UNGMModel",
    "baselines",
    "build_rule",
    "ct_model",
    "cubature",
    "estimate",
    "expect",
    "filter_pass",
    "gauss",
    "kernels",
    "models",
    "pairwise_joint",
    "parse_scheme",
    "point_count",
    "rts_pass",
    "simulate",
    "ungm_model",
]
