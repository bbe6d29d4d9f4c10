"""Dirichlet-process mixture models for asset returns, t-copula dependence
and distortion risk measures."""

from .copula import (ConcordanceMatrix, CopulaModel, JointSample, fit_copula, gaussian_copula_logdensity,
                     kendall_tau, nearest_correlation, pca_projection, simulate_joint, tau_to_correlation)
from .diagnostics import DensityGrid, hpd_interval, kde, mean_square_deviation
from .dp_mixture import (DpConfig, RpmEstimate, predictive_cdf, predictive_density, predictive_quantile,
                         run_blocked_gibbs)
from .errors import (DimensionError, DomainError, DpRiskError, InputError, InsufficientDataError,
                     IntegrationError, NumericalError)
from .ingest import ingest_csv
from .market import (LogReturnSeries, MixtureGbmParams, PriceSeries, compute_log_returns, martingale_residuals,
                     simulate_mixture_gbm)
from .pipeline import RunConfig, run_pipeline
from .portfolio import Portfolio, mean_variance_weights, portfolio_returns, portfolio_risk
from .risk import (DistortionFunction, RiskReport, choquet_integral, classify_distortion, cvar_distortion, esf,
                   var, var_distortion, wang_distortion, wang_measure)

__all__ = [
    "ConcordanceMatrix", "CopulaModel", "DensityGrid", "DimensionError", "DistortionFunction", "DomainError",
    "DpConfig", "DpRiskError", "InputError", "InsufficientDataError", "IntegrationError", "JointSample",
    "LogReturnSeries", "MixtureGbmParams", "NumericalError", "Portfolio", "PriceSeries", "RiskReport",
    "RpmEstimate", "RunConfig", "choquet_integral", "classify_distortion", "compute_log_returns",
    "cvar_distortion", "esf", "fit_copula", "gaussian_copula_logdensity", "hpd_interval", "ingest_csv", "kde",
    "kendall_tau", "martingale_residuals", "mean_square_deviation", "mean_variance_weights",
    "nearest_correlation", "pca_projection", "portfolio_returns", "portfolio_risk", "predictive_cdf",
    "predictive_density", "predictive_quantile", "run_blocked_gibbs", "run_pipeline", "simulate_joint",
    "simulate_mixture_gbm", "tau_to_correlation", "var", "var_distortion", "wang_distortion", "wang_measure",
]

__version__ = "0.1.0"
