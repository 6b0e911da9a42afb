"""Sieve maximum-likelihood regression for covariates with Berkson error.

The observed covariate ``x`` relates to the true one by ``x* = x + dx*``;
an outcome ``y = g(x*) + dy`` and an instrument ``z = h(x*) + dz`` are
observed.  ``g``, ``h`` and the three error densities are estimated jointly
from the conditional likelihood of ``(y, z)`` given ``x``.
"""
from .estimator import (
    BerksonSieveRegressor,
    FitResult,
    NaiveSeriesRegressor,
    SieveOrders,
    SieveSettings,
    fit,
    initialize,
    naive_fit,
)
from .exceptions import ConfigError, InfeasibleStartError, NumericalError, RankDeficientError
from .likelihood import Dataset, QuadratureGrid, conditional_density, log_likelihood
from .selection import SelectionPlan, SelectionTable, select
from .sieve import DensitySieve, ModelParams, PolySieve, eliminate_constraints, make_density
from .simplex import SimplexOptions, SimplexResult, minimize
from .simulation import Scenario, generate, replicate

__version__ = "0.1.0"

__all__ = [
    "BerksonSieveRegressor",
    "NaiveSeriesRegressor",
    "FitResult",
    "SieveOrders",
    "SieveSettings",
    "fit",
    "initialize",
    "naive_fit",
    "ConfigError",
    "InfeasibleStartError",
    "NumericalError",
    "RankDeficientError",
    "Dataset",
    "QuadratureGrid",
    "conditional_density",
    "log_likelihood",
    "SelectionPlan",
    "SelectionTable",
    "select",
    "DensitySieve",
    "ModelParams",
    "PolySieve",
    "eliminate_constraints",
    "make_density",
    "SimplexOptions",
    "SimplexResult",
    "minimize",
    "Scenario",
    "generate",
    "replicate",
]
