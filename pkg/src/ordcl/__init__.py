"""Bias-reduced estimation for cumulative link models of ordinal responses."""
from ordcl.estimation import (
    FitControl,
    FitResult,
    NonConvergenceError,
    SingularInformationError,
    UndefinedEstimatorError,
    adjusted_score,
    adjustment,
    first_order_bias,
    fisher_info,
    fit,
    fit_bc,
    fit_ml,
    fit_rb,
    loglik,
    score,
)
from ordcl.inference import (
    ContrastMatrix,
    TestResult,
    adjusted_score_test,
    embed,
    empirical_logit,
    wald_ci,
    wald_contrast_test,
)
from ordcl.links import DomainError, LinkFamily
from ordcl.model import (
    DegenerateDataError,
    IdentifiabilityError,
    InvalidParameterError,
    ModelSpec,
    OrdinalData,
    OrdinalError,
    build_design,
    probabilities,
)

__version__ = "0.1.0"

__all__ = [
    "ContrastMatrix", "DegenerateDataError", "DomainError", "FitControl", "FitResult",
    "IdentifiabilityError", "InvalidParameterError", "LinkFamily", "ModelSpec",
    "NonConvergenceError", "OrdinalData", "OrdinalError", "SingularInformationError",
    "TestResult", "UndefinedEstimatorError", "adjusted_score", "adjusted_score_test",
    "adjustment", "build_design", "embed", "empirical_logit", "first_order_bias",
    "fisher_info", "fit", "fit_bc", "fit_ml", "fit_rb", "loglik", "probabilities", "score",
    "wald_ci", "wald_contrast_test",
]
