"""Firth, FLIC, and ridge fits plus covariate standardization and prior-based penalties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .config import FIRTH_MAX_ITERATIONS, MAX_ITERATIONS, RESCALE_S
from .glm import (
    Evaluation,
    FitError,
    NonConvergenceError,
    SingularInformationError,
    expit,
    fit_ml,
    likelihood_objective,
    log_likelihood,
    newton_maximize,
    outcome_flags,
    score_and_fisher,
)
from .models import Dataset, DimensionMismatchError, FitResult


class ConstantColumnError(ValueError):
    """Raised when a covariate has zero sample variance and cannot be standardized."""


@dataclass(frozen=True, eq=False)
class Standardizer:
    means: np.ndarray
    sds: np.ndarray

    @classmethod
    def identity(cls, k: int) -> Standardizer:
        return cls(means=np.zeros(k), sds=np.ones(k))

    def _check(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.means.size + 1,):
            raise DimensionMismatchError(
                f"Expected {self.means.size + 1} coefficients; got shape {beta.shape}"
            )
        return beta

    def standardize_beta(self, beta: np.ndarray) -> np.ndarray:
        beta = self._check(beta)
        slopes = beta[1:] * self.sds
        return np.concatenate([[beta[0] + beta[1:] @ self.means], slopes])

    def destandardize_beta(self, beta_std: np.ndarray) -> np.ndarray:
        beta_std = self._check(beta_std)
        slopes = beta_std[1:] / self.sds
        return np.concatenate([[beta_std[0] - slopes @ self.means], slopes])


def standardize(data: Dataset) -> tuple[Dataset, Standardizer]:
    """Center and scale every non-intercept column (sample sd, divisor N-1)."""

    covariates = data.X[data.observed, 1:]
    if covariates.shape[0] < 2:
        raise ConstantColumnError("At least two observations are needed to standardize")
    means = covariates.mean(axis=0)
    sds = covariates.std(axis=0, ddof=1)
    constant = np.flatnonzero(~(sds > 0))
    if constant.size:
        raise ConstantColumnError(f"Covariate columns {(constant + 1).tolist()} are constant")
    X = np.array(data.X)
    X[:, 1:] = (X[:, 1:] - means) / sds
    return data.with_design(X), Standardizer(means=means, sds=sds)


def destandardize(beta_std: np.ndarray, std: Standardizer) -> np.ndarray:
    return std.destandardize_beta(beta_std)


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    lam: float
    penalized_mask: np.ndarray
    rescale_s: float = RESCALE_S

    @classmethod
    def create(
        cls,
        lam: float,
        p: int,
        *,
        rescale_s: float = RESCALE_S,
        penalized_mask: np.ndarray | None = None,
    ) -> PenaltySpec:
        mask = np.arange(p) > 0 if penalized_mask is None else np.array(penalized_mask, dtype=bool)
        if mask.shape != (p,):
            raise DimensionMismatchError(f"Penalty mask must have length {p}; got {mask.shape}")
        if mask[0]:
            raise ValueError("The intercept is never penalized")
        if not lam >= 0 or not np.isfinite(lam):
            raise ValueError(f"Lambda must be finite and nonnegative; got {lam}")
        if not rescale_s > 0:
            raise ValueError(f"Rescaling factor must be positive; got {rescale_s}")
        return cls(lam=float(lam), penalized_mask=mask, rescale_s=float(rescale_s))

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.penalized_mask.astype(float))


@dataclass(frozen=True)
class PriorSpec:
    """Symmetric prior interval (1/or_upper, or_upper) for a standardized covariate's odds ratio."""

    or_upper: float
    coverage: float = 0.95

    def __post_init__(self) -> None:
        if not self.or_upper > 1:
            raise ValueError(f"Upper odds-ratio bound must exceed 1; got {self.or_upper}")
        if not 0 < self.coverage < 1:
            raise ValueError(f"Coverage must lie in (0, 1); got {self.coverage}")


def prior_to_lambda(prior: PriorSpec) -> float:
    z = float(norm.ppf((1.0 + prior.coverage) / 2.0))
    prior_variance = (np.log(prior.or_upper) / z) ** 2
    return float(1.0 / prior_variance)


def _hat_diagonal(X: np.ndarray, curvature: np.ndarray) -> np.ndarray:
    weighted = X * np.sqrt(curvature)[:, np.newaxis]
    q, _ = linalg.qr(weighted, mode="economic", check_finite=False)
    return np.einsum("ij,ij->i", q, q)


def firth_objective(data: Dataset):
    base = likelihood_objective(data)

    def evaluate(beta: np.ndarray) -> Evaluation:
        plain = base(beta)
        sign, logdet = np.linalg.slogdet(plain.information)
        if sign <= 0:
            return Evaluation(-np.inf, plain.gradient, plain.information, plain.clipped)
        pi = expit(data.X @ beta)
        hat = _hat_diagonal(data.X, data.w * pi * (1.0 - pi))
        gradient = plain.gradient + data.X.T @ (hat * (0.5 - pi))
        return Evaluation(plain.value + 0.5 * logdet, gradient, plain.information, plain.clipped)

    return evaluate


def fit_firth(
    data: Dataset,
    init: np.ndarray | None = None,
    *,
    max_iterations: int = FIRTH_MAX_ITERATIONS,
) -> FitResult:
    """Maximize the log-likelihood plus half the log-determinant of the Fisher information."""

    init = np.zeros(data.p) if init is None else data.check_beta(np.array(init, dtype=float))
    outcome = newton_maximize(firth_objective(data), init, max_iterations=max_iterations)
    result = FitResult(
        beta=outcome.beta,
        loglik=log_likelihood(data, outcome.beta),
        fisher=outcome.evaluation.information,
        converged=outcome.converged,
        iterations=outcome.iterations,
        flags=outcome_flags(outcome),
        gradient_norm=outcome.gradient_norm,
    )
    if outcome.converged:
        return result
    if outcome.singular:
        raise SingularInformationError("Firth information became singular", result)
    raise NonConvergenceError(
        f"Firth iterations did not converge within {max_iterations} steps", result
    )


def flic(data: Dataset, firth_fit: FitResult) -> FitResult:
    """Re-estimate the intercept by ML with every slope frozen at its Firth value."""

    if not firth_fit.converged:
        raise ValueError("FLIC needs a converged Firth fit")
    return fit_ml(data, frozen=range(1, data.p), init=firth_fit.beta)


def augment(std_data: Dataset, spec: PenaltySpec) -> Dataset:
    """Append one y=1 and one y=0 pseudo-record per penalized covariate, each weighted 2s²λ."""

    penalized = np.flatnonzero(spec.penalized_mask)
    rows = np.zeros((2 * penalized.size, std_data.p))
    rows[2 * np.arange(penalized.size), penalized] = 1.0 / spec.rescale_s
    rows[2 * np.arange(penalized.size) + 1, penalized] = 1.0 / spec.rescale_s
    outcomes = np.tile([1.0, 0.0], penalized.size)
    weight = 2.0 * spec.rescale_s**2 * spec.lam
    return Dataset.create(
        np.vstack([std_data.X, rows]),
        np.concatenate([std_data.y, outcomes]),
        np.concatenate([std_data.w, np.full(rows.shape[0], weight)]),
        pseudo=np.concatenate([std_data.pseudo, np.ones(rows.shape[0], dtype=bool)]),
    )


def _on_original(std_data: Dataset, result: FitResult) -> FitResult:
    _, fisher = score_and_fisher(std_data, result.beta)
    return FitResult(
        beta=result.beta,
        loglik=log_likelihood(std_data, result.beta),
        fisher=fisher,
        converged=result.converged,
        iterations=result.iterations,
        flags=result.flags,
        gradient_norm=result.gradient_norm,
    )


def fit_ridge_augmented(
    std_data: Dataset,
    spec: PenaltySpec,
    init: np.ndarray | None = None,
    *,
    max_iterations: int = MAX_ITERATIONS,
) -> FitResult:
    """Ridge fit as weighted ML on pseudo-record augmented data; reports original-data ℓ and I."""

    try:
        result = fit_ml(augment(std_data, spec), init=init, max_iterations=max_iterations)
    except FitError as error:
        last = None if error.result is None else _on_original(std_data, error.result)
        raise type(error)(str(error), last) from error
    return _on_original(std_data, result)


def ridge_objective(std_data: Dataset, spec: PenaltySpec):
    base = likelihood_objective(std_data)
    penalty = spec.matrix

    def evaluate(beta: np.ndarray) -> Evaluation:
        plain = base(beta)
        shrink = spec.lam * (penalty @ beta)
        return Evaluation(
            plain.value - 0.5 * float(beta @ shrink),
            plain.gradient - shrink,
            plain.information + spec.lam * penalty,
            plain.clipped,
        )

    return evaluate


def fit_ridge_direct(
    std_data: Dataset,
    spec: PenaltySpec,
    init: np.ndarray | None = None,
    *,
    max_iterations: int = MAX_ITERATIONS,
) -> FitResult:
    """Newton on the exact penalized objective ℓ(β) - (λ/2) Σ_k β_k²."""

    if init is None:
        init = np.zeros(std_data.p)
    init = std_data.check_beta(np.array(init, dtype=float))
    outcome = newton_maximize(ridge_objective(std_data, spec), init, max_iterations=max_iterations)
    _, fisher = score_and_fisher(std_data, outcome.beta)
    result = FitResult(
        beta=outcome.beta,
        loglik=log_likelihood(std_data, outcome.beta),
        fisher=fisher,
        converged=outcome.converged,
        iterations=outcome.iterations,
        flags=outcome_flags(outcome),
        gradient_norm=outcome.gradient_norm,
    )
    if outcome.converged:
        return result
    if outcome.singular:
        raise SingularInformationError("Penalized information became singular", result)
    raise NonConvergenceError(
        f"Penalized Newton did not converge within {max_iterations} steps", result
    )


def penalized_objective_value(std_data: Dataset, spec: PenaltySpec, beta: np.ndarray) -> float:
    return ridge_objective(std_data, spec)(np.asarray(beta, dtype=float)).value
