"""Performance measures for coefficient recovery, prediction, calibration, and λ* stability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import median_abs_deviation, spearmanr
from sklearn.metrics import roc_auc_score

from .config import SLOPE_WINSOR_FLOOR
from .glm import FitError, fit_ml
from .models import Dataset, DimensionMismatchError

DEGENERATE_VARIANCE = 1e-12


class SingleClassError(ValueError):
    """Raised when a concordance statistic is requested for outcomes of one class only."""


def _finite(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float).ravel()
    return values[np.isfinite(values)]


def count_nonfinite(values: np.ndarray) -> int:
    values = np.asarray(values, dtype=float).ravel()
    return int(np.sum(~np.isfinite(values)))


def rmse_coef(estimates: np.ndarray, truth: float) -> float:
    """Root mean squared error over finite estimates; nonfinite ones are excluded."""

    finite = _finite(estimates)
    if finite.size == 0:
        raise ValueError("RMSE needs at least one finite estimate")
    return float(np.sqrt(np.mean((finite - truth) ** 2)))


def rmse_pred(pi_hat: np.ndarray, pi_true: np.ndarray) -> float:
    pi_hat, pi_true = np.asarray(pi_hat, dtype=float), np.asarray(pi_true, dtype=float)
    if pi_hat.shape != pi_true.shape:
        raise DimensionMismatchError(f"Predictions {pi_hat.shape} and truth {pi_true.shape} differ")
    return float(np.sqrt(np.mean((pi_hat - pi_true) ** 2)))


def rmse_pred_from_contributions(contributions: np.ndarray) -> float:
    """Pool per-replicate mean squared prediction errors (equal N per replicate)."""

    finite = _finite(contributions)
    if finite.size == 0:
        raise ValueError("No finite prediction-error contributions")
    return float(np.sqrt(np.mean(finite)))


@dataclass(frozen=True)
class CalibrationSlope:
    slope: float
    degenerate: bool
    converged: bool


def calibration_slope(validation: Dataset, beta_hat: np.ndarray) -> CalibrationSlope:
    """Slope of a logistic refit of validation outcomes on the model's linear predictor."""

    eta = validation.X @ validation.check_beta(beta_hat)
    if not np.all(np.isfinite(eta)) or np.var(eta) < DEGENERATE_VARIANCE:
        return CalibrationSlope(slope=0.0, degenerate=True, converged=True)
    refit_data = Dataset.from_covariates(eta, validation.y, validation.w)
    try:
        fit = fit_ml(refit_data)
    except FitError as error:
        if error.result is None:
            raise
        slope = float(error.result.beta[1])
        return CalibrationSlope(slope=slope, degenerate=False, converged=False)
    return CalibrationSlope(slope=float(fit.beta[1]), degenerate=False, converged=True)


def winsorize_slopes(slopes: np.ndarray, floor: float = SLOPE_WINSOR_FLOOR) -> np.ndarray:
    return np.maximum(np.asarray(slopes, dtype=float), floor)


def rmsd_log_slope(slopes: np.ndarray) -> float:
    finite = _finite(slopes)
    if finite.size == 0:
        raise ValueError("RMSD needs at least one finite slope")
    distances = np.log(1.0) - np.log(winsorize_slopes(finite))
    return float(np.sqrt(np.mean(distances**2)))


def c_index(pi_hat: np.ndarray, y: np.ndarray) -> float:
    """Concordance probability for event/non-event pairs, ties counted one half."""

    y = np.asarray(y, dtype=float)
    if np.unique(y).size < 2:
        raise SingleClassError("The c-index needs both events and non-events")
    return float(roc_auc_score(y, np.asarray(pi_hat, dtype=float)))


def mad(values: np.ndarray) -> float:
    return float(median_abs_deviation(np.asarray(values, dtype=float), scale=1.0))


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"Spearman inputs {a.shape} and {b.shape} differ")
    return float(spearmanr(a, b).statistic)
