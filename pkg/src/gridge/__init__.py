"""Generalized ridge maximum likelihood with data-driven penalty selection."""

from __future__ import annotations

from .errors import (
    ConfigError,
    DataError,
    DegenerateFoldError,
    GridgeError,
    InvalidArgumentError,
    InvalidSpecError,
    InvalidWeightingError,
    SingularMomentError,
    SolverFailure,
)
from .estimator import FitResult, PenaltySpec, fit, fit_mle
from .families import (
    FAMILIES,
    BinaryLogit,
    Dataset,
    LinearGaussian,
    ModelFamily,
    MultinomialLogit,
    PoissonLog,
    get_family,
    slope_mask,
)
from .risk import MomentInputs, improvement_bound, mse_first_order, prop1_threshold
from .tuner import RiskCurve, TuneResult, fit_gridge, select_cv, select_sure

__version__ = "0.1.0"
