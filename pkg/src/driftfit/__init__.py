"""Doubly robust covariate shift regression with cross-fitted nuisances."""

__version__ = "0.1.0"

from .datamodel import EstimatorConfig, FoldPlan, LabeledDataset, UnlabeledDataset, make_fold_plan
from .density_ratio import DensityRatioModel, ulsif_cv, ulsif_fit, ulsif_fit_cv
from .drcsa import (
    CrossFitNuisances,
    DrFitResult,
    csa_np_fit,
    dr_fit,
    dr_risk,
    dr_risk_grad,
    fit_nuisances,
    scsa_fit,
    sdb_fit,
    wls_cf_fit,
)
from .errors import (
    DimensionMismatch,
    DriftfitError,
    InvalidData,
    LengthMismatch,
    NoConvergence,
    NotPositiveDefinite,
    TooFewSamples,
)
from .inference import SandwichCovariance, confidence_interval, estimate_covariance, pointwise_se
from .models import Basis, KrrModel, ParametricModel, krr_fit, krr_fit_cv, ols_fit, wls_fit
from .numkit import RngStream, cholesky, solve_spd
from .simbench import SimDesign, generate, run_benchmark

__all__ = [name for name in dir() if not name.startswith("_")]
