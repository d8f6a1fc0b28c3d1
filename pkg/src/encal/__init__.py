"""Ensemble Kalman calibration through Gaussian process emulators."""

from .core import (MMS_BOUNDS, MMS_NAMES, TOY_BOUNDS, TOY_NAMES, ClampResult,
                   Ensemble, GaussianSummary, ObservationSet, ParameterVector,
                   clamp_to_bounds, ensemble_mean_cov)
from .enkf import (EnkfConfig, EnkfResult, default_sigma_theta, kalman_gain,
                   perturb_observation, run_enkf)
from .gp import (CallableBank, EmulatorBank, EmulatorModel, fit, fit_bank,
                 load_bank, log_marginal_likelihood, predict, predict_bank,
                 r2_score, save_bank)
from .mcmc import (McmcConfig, McmcResult, TruncatedGaussianPrior,
                   log_posterior, run_mcmc)

__version__ = "0.1.0"

__all__ = [
    "MMS_BOUNDS", "MMS_NAMES", "TOY_BOUNDS", "TOY_NAMES", "ClampResult",
    "Ensemble", "GaussianSummary", "ObservationSet", "ParameterVector",
    "clamp_to_bounds", "ensemble_mean_cov",
    "EnkfConfig", "EnkfResult", "default_sigma_theta", "kalman_gain",
    "perturb_observation", "run_enkf",
    "CallableBank", "EmulatorBank", "EmulatorModel", "fit", "fit_bank",
    "load_bank", "log_marginal_likelihood", "predict", "predict_bank",
    "r2_score", "save_bank",
    "McmcConfig", "McmcResult", "TruncatedGaussianPrior", "log_posterior",
    "run_mcmc",
    "__version__",
]
