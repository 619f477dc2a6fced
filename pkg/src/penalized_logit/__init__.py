"""Penalized logistic regression estimators and a Monte Carlo comparison harness."""

from .estimators import METHODS, FitSettings, MethodFit, MethodWorkspace, fit_methods
from .glm import FitError, NonConvergenceError, SingularInformationError, fit_ml
from .models import Dataset, FitResult, ReplicateRecord
from .penalty import PenaltySpec, PriorSpec, fit_firth, fit_ridge_augmented, flic, prior_to_lambda
from .separation import detect_separation
from .tuning import LambdaGrid, TuningError

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "Dataset",
    "FitError",
    "FitResult",
    "FitSettings",
    "LambdaGrid",
    "MethodFit",
    "MethodWorkspace",
    "NonConvergenceError",
    "PenaltySpec",
    "PriorSpec",
    "ReplicateRecord",
    "SingularInformationError",
    "TuningError",
    "__version__",
    "detect_separation",
    "fit_firth",
    "fit_methods",
    "fit_ml",
    "fit_ridge_augmented",
    "flic",
    "prior_to_lambda",
]
