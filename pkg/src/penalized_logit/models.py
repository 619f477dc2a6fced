"""Typed records and stable identifiers used throughout the pipeline."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

SEPARATION_SUSPECTED = "separation_suspected"
STEP_HALVING_USED = "step_halving_used"
PROB_CLIPPED = "prob_clipped"
NONCONVERGENCE = "nonconvergence"
BOUNDARY_LAMBDA = "boundary_lambda"
UNSTRATIFIED_FOLDS = "unstratified_folds"
DEGENERATE_SLOPE = "degenerate_slope"
SEPARATION_CHECK_FAILED = "separation_check_failed"
TUNING_FAILED = "tuning_failed"
CONSTANT_COLUMN = "constant_column"
SINGLE_CLASS_VALIDATION = "single_class_validation"


class DimensionMismatchError(ValueError):
    """Raised when arrays passed together disagree in shape."""


class InvalidDatasetError(ValueError):
    """Raised when a design, outcome, or weight vector violates the dataset contract."""


def stable_id(*parts: object, length: int = 32) -> str:
    value = "\x1f".join(str(part) for part in parts)
    return hashlib.sha256(value.encode("utf-8")).hexdigest()[:length]


def derive_seed(*parts: object) -> int:
    """Map a tuple such as (master_seed, scenario_id, replicate, purpose) to a 64-bit seed."""

    return int(stable_id(*parts, length=16), 16)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    pseudo: np.ndarray

    @classmethod
    def create(
        cls,
        X: np.ndarray,
        y: np.ndarray,
        w: np.ndarray | None = None,
        *,
        pseudo: np.ndarray | None = None,
    ) -> Dataset:
        X = np.array(X, dtype=float, ndmin=2)
        y = np.array(y, dtype=float).ravel()
        n = X.shape[0]
        w = np.ones(n) if w is None else np.array(w, dtype=float).ravel()
        pseudo = np.zeros(n, dtype=bool) if pseudo is None else np.array(pseudo, dtype=bool)
        if X.ndim != 2 or n < 1 or X.shape[1] < 1:
            raise InvalidDatasetError(f"Design must be N x (K+1) with N, K+1 >= 1; got {X.shape}")
        if y.shape != (n,) or w.shape != (n,) or pseudo.shape != (n,):
            raise DimensionMismatchError(
                f"Design has {n} rows but y/w/pseudo have {y.shape}/{w.shape}/{pseudo.shape}"
            )
        if not np.all((y == 0) | (y == 1)):
            raise InvalidDatasetError("Every outcome must be exactly 0 or 1")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidDatasetError("Weights must be finite and nonnegative")
        if not np.all(np.isfinite(X)):
            raise InvalidDatasetError("Design entries must be finite")
        intercept = np.where(pseudo, 0.0, 1.0)
        if not np.array_equal(X[:, 0], intercept):
            raise InvalidDatasetError("Column 0 must be 1 for observations, 0 for pseudo-records")
        return cls(X=_frozen(X), y=_frozen(y), w=_frozen(w), pseudo=_frozen(pseudo))

    @classmethod
    def from_covariates(
        cls, covariates: np.ndarray, y: np.ndarray, w: np.ndarray | None = None
    ) -> Dataset:
        covariates = np.array(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates[:, np.newaxis]
        intercept = np.ones((covariates.shape[0], 1))
        return cls.create(np.hstack([intercept, covariates]), y, w)

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    @property
    def observed(self) -> np.ndarray:
        return ~self.pseudo

    def event_rate(self) -> float:
        weights = self.w * self.observed
        total = float(weights.sum())
        return float(weights @ self.y) / total if total > 0 else float("nan")

    def rows(self, index: np.ndarray) -> Dataset:
        return Dataset.create(
            self.X[index], self.y[index], self.w[index], pseudo=self.pseudo[index]
        )

    def with_design(self, X: np.ndarray) -> Dataset:
        return Dataset.create(X, self.y, self.w, pseudo=self.pseudo)

    def check_beta(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.p,):
            raise DimensionMismatchError(f"Expected {self.p} coefficients; got shape {beta.shape}")
        return beta


@dataclass(frozen=True, eq=False)
class FitResult:
    beta: np.ndarray
    loglik: float
    fisher: np.ndarray
    converged: bool
    iterations: int
    flags: frozenset[str] = field(default_factory=frozenset)
    gradient_norm: float = float("nan")

    @property
    def slopes(self) -> np.ndarray:
        return self.beta[1:]


@dataclass(frozen=True)
class ReplicateRecord:
    scenario_id: str
    replicate: int
    method: str
    lambda_star: float | None
    boundary_hit: bool | None
    separated: bool
    converged: bool
    beta: tuple[float, ...]
    slope: float | None
    cindex: float | None
    rmse_pred_contrib: float | None
    flags: tuple[str, ...] = ()
