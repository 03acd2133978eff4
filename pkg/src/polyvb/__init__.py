"""Variational Bayes estimation of saturated diagnostic classification models
with polytomous attributes."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("polyvb")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .attributes import (GMatrix, ProfileSpace, QMatrix, build_gmatrices, build_gmatrix,
                         collapse_profile, enumerate_profiles, reduce_profile)
from .effects import DeltaEffects, delta_to_theta, design_matrix, theta_to_delta
from .gibbs import ChainConfig, McmcSummary, gibbs_fit, split_rhat
from .metrics import (RecoveryReport, bias_rmse_pi, bias_rmse_theta, classification_rates,
                      monotonicity_check)
from .simulate import SimConfig, SimTruth, builtin_qmatrix, simulate
from .vb import FitConfig, FitReport, Priors, VariationalState, default_priors, fit

__all__ = [
    "ChainConfig", "DeltaEffects", "FitConfig", "FitReport", "GMatrix", "McmcSummary",
    "Priors", "ProfileSpace", "QMatrix", "RecoveryReport", "SimConfig", "SimTruth",
    "VariationalState", "bias_rmse_pi", "bias_rmse_theta", "build_gmatrices", "build_gmatrix",
    "builtin_qmatrix", "classification_rates", "collapse_profile", "default_priors",
    "delta_to_theta", "design_matrix", "enumerate_profiles", "fit", "gibbs_fit",
    "monotonicity_check", "reduce_profile", "simulate", "split_rhat", "theta_to_delta",
]
