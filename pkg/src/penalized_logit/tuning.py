"""Complexity-parameter selection for ridge logistic regression."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from sklearn.model_selection import KFold, StratifiedKFold

from .config import (
    CV_FOLDS,
    DEFAULT_GCV_MODE,
    GCV_MODES,
    GRID_HIGH_EXPONENT,
    GRID_LOW_EXPONENT,
    GRID_SIZE,
    RCV_REPETITIONS,
    RESCALE_S,
)
from .glm import FitError, clip_probabilities, expit, fit_ml_batch
from .models import (
    NONCONVERGENCE,
    PROB_CLIPPED,
    UNSTRATIFIED_FOLDS,
    Dataset,
    DimensionMismatchError,
    FitResult,
)
from .penalty import PenaltySpec, Standardizer, augment, fit_ridge_augmented

TieRule = Literal["min_smallest", "min_largest"]


class TuningError(RuntimeError):
    """Raised when no complexity parameter can be selected."""


@dataclass(frozen=True, eq=False)
class LambdaGrid:
    values: np.ndarray

    @classmethod
    def create(cls, values: np.ndarray) -> LambdaGrid:
        values = np.array(values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("A lambda grid needs at least one value")
        if np.any(values <= 0) or np.any(np.diff(values) <= 0):
            raise ValueError("Lambda grid values must be positive and strictly ascending")
        values.setflags(write=False)
        return cls(values=values)

    @classmethod
    def log_spaced(cls, low_exponent: float, high_exponent: float, size: int) -> LambdaGrid:
        values = 10.0 ** np.linspace(low_exponent, high_exponent, size)
        values[0], values[-1] = 10.0**low_exponent, 10.0**high_exponent
        return cls.create(values)

    @classmethod
    def default(cls) -> LambdaGrid:
        return cls.log_spaced(GRID_LOW_EXPONENT, GRID_HIGH_EXPONENT, GRID_SIZE)

    def __len__(self) -> int:
        return int(self.values.size)

    def is_boundary(self, lam: float) -> bool:
        return bool(np.isclose(lam, self.values[0], rtol=1e-12, atol=0.0)) or bool(
            np.isclose(lam, self.values[-1], rtol=1e-12, atol=0.0)
        )


@dataclass(frozen=True, eq=False)
class CriterionProfile:
    criterion: str
    grid: LambdaGrid
    scores: np.ndarray
    selected: float
    selected_index: int
    flags: tuple[frozenset[str], ...] = ()

    @property
    def boundary_hit(self) -> bool:
        return self.selected_index in (0, len(self.grid) - 1)


@dataclass(frozen=True)
class FoldAssignment:
    folds: np.ndarray
    n_folds: int
    seed: int
    stratified: bool

    @classmethod
    def draw(cls, y: np.ndarray, seed: int, n_folds: int = CV_FOLDS) -> FoldAssignment:
        y = np.asarray(y)
        if y.size < n_folds:
            raise TuningError(f"{n_folds}-fold CV needs at least {n_folds} observations")
        events = int(np.sum(y == 1))
        stratified = min(events, y.size - events) >= n_folds
        splitter = (
            StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
            if stratified
            else KFold(n_splits=n_folds, shuffle=True, random_state=seed)
        )
        folds = np.empty(y.size, dtype=int)
        for fold, (_, held_out) in enumerate(splitter.split(np.zeros(y.size), y)):
            folds[held_out] = fold
        return cls(folds=folds, n_folds=n_folds, seed=seed, stratified=stratified)


@dataclass(frozen=True, eq=False)
class RidgePath:
    """Full-data ridge fits over a grid, indexed like the grid."""

    grid: LambdaGrid
    fits: tuple[FitResult, ...]
    rescale_s: float = RESCALE_S

    @property
    def betas(self) -> np.ndarray:
        return np.vstack([fit.beta for fit in self.fits])

    @property
    def converged(self) -> np.ndarray:
        return np.array([fit.converged for fit in self.fits])


def ridge_path(
    std_data: Dataset,
    grid: LambdaGrid,
    *,
    rescale_s: float = RESCALE_S,
    init: np.ndarray | None = None,
) -> RidgePath:
    """Fit from the largest λ down to the smallest, warm-starting at the last converged fit."""

    fits: list[FitResult | None] = [None] * len(grid)
    start = None if init is None else np.asarray(init, dtype=float)
    for index in range(len(grid) - 1, -1, -1):
        spec = PenaltySpec.create(grid.values[index], std_data.p, rescale_s=rescale_s)
        try:
            fit = fit_ridge_augmented(std_data, spec, init=start)
        except FitError as error:
            if error.result is None:
                raise
            fit = error.result
        fits[index] = fit
        if fit.converged:
            start = fit.beta
    return RidgePath(grid=grid, fits=tuple(fits), rescale_s=rescale_s)


@dataclass(frozen=True, eq=False)
class HeldOutPredictions:
    probabilities: np.ndarray
    converged: np.ndarray
    clipped: np.ndarray


def _held_out(
    std_data: Dataset, spec: PenaltySpec, init: np.ndarray, masks: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    augmented = augment(std_data, spec)
    weights = np.tile(augmented.w, (masks.shape[0], 1))
    weights[:, : std_data.n][masks] = 0.0
    batch = fit_ml_batch(augmented, weights, init)
    return batch.beta, batch.converged, batch.clipped


def loocv_fit(
    std_data: Dataset,
    lam: float,
    *,
    rescale_s: float = RESCALE_S,
    init: np.ndarray | None = None,
) -> HeldOutPredictions:
    spec = PenaltySpec.create(lam, std_data.p, rescale_s=rescale_s)
    if init is None:
        try:
            init = fit_ridge_augmented(std_data, spec).beta
        except FitError as error:
            if error.result is None:
                raise
            init = error.result.beta
    masks = np.eye(std_data.n, dtype=bool)
    betas, converged, batch_clipped = _held_out(std_data, spec, init, masks)
    raw = expit(np.einsum("ij,ij->i", std_data.X, betas))
    probabilities, _ = clip_probabilities(raw)
    clipped = (probabilities != raw) | batch_clipped
    return HeldOutPredictions(probabilities=probabilities, converged=converged, clipped=clipped)


def loocv_predictions(
    std_data: Dataset,
    lam: float,
    *,
    rescale_s: float = RESCALE_S,
    init: np.ndarray | None = None,
) -> np.ndarray:
    """Leave-one-out probabilities, each from a ridge refit on the other N-1 rows."""

    return loocv_fit(std_data, lam, rescale_s=rescale_s, init=init).probabilities


@dataclass(frozen=True, eq=False)
class LoocvPath:
    probabilities: np.ndarray
    converged: np.ndarray
    clipped: np.ndarray


def loocv_path(std_data: Dataset, path: RidgePath) -> LoocvPath:
    predictions = [
        loocv_fit(std_data, lam, rescale_s=path.rescale_s, init=fit.beta)
        for lam, fit in zip(path.grid.values, path.fits)
    ]
    return LoocvPath(
        probabilities=np.vstack([item.probabilities for item in predictions]),
        converged=np.vstack([item.converged for item in predictions]),
        clipped=np.vstack([item.clipped for item in predictions]),
    )


def _check_lengths(pi: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pi, y = np.asarray(pi, dtype=float), np.asarray(y, dtype=float)
    if pi.shape != y.shape:
        raise DimensionMismatchError(f"Predictions {pi.shape} and outcomes {y.shape} differ")
    return pi, y


def criterion_d(pi_loo: np.ndarray, y: np.ndarray) -> float:
    pi, y = _check_lengths(pi_loo, y)
    pi, _ = clip_probabilities(pi)
    return float(-2.0 * np.sum(y * np.log(pi) + (1.0 - y) * np.log1p(-pi)))


def criterion_ce(pi_loo: np.ndarray, y: np.ndarray, c: float | None = None) -> float:
    pi, y = _check_lengths(pi_loo, y)
    c = float(np.mean(y)) if c is None else float(c)
    if not 0 < c < 1:
        raise ValueError(f"Classification cut-off must lie in (0, 1); got {c}")
    tied = np.abs(pi - c) <= 1e-12
    below = (pi < c) & ~tied
    above = (pi > c) & ~tied
    errors = y * below + (1.0 - y) * above + 0.5 * tied
    return float(np.mean(errors))


def effective_df(
    std_data: Dataset,
    beta_hat: np.ndarray,
    lam: float,
    penalized_mask: np.ndarray | None = None,
) -> float:
    """Trace of I(β̂)(I(β̂) + λP)⁻¹."""

    spec = PenaltySpec.create(lam, std_data.p, penalized_mask=penalized_mask)
    beta_hat = std_data.check_beta(beta_hat)
    pi = expit(std_data.X @ beta_hat)
    fisher = (std_data.X.T * (std_data.w * pi * (1.0 - pi))) @ std_data.X
    penalized = fisher + spec.lam * spec.matrix
    try:
        return float(np.trace(np.linalg.solve(penalized, fisher)))
    except np.linalg.LinAlgError as error:
        raise TuningError(f"Penalized information is singular at lambda={lam}") from error


def criterion_gcv(n: int, deviance: float, df_e: float) -> float:
    if df_e >= n:
        raise TuningError(f"Effective degrees of freedom {df_e:.4f} reach the sample size {n}")
    return float(n * deviance / (n - df_e) ** 2)


def criterion_aic(
    std_data: Dataset,
    lam: float,
    *,
    rescale_s: float = RESCALE_S,
    init: np.ndarray | None = None,
) -> float:
    spec = PenaltySpec.create(lam, std_data.p, rescale_s=rescale_s)
    fit = fit_ridge_augmented(std_data, spec, init=init)
    return -2.0 * fit.loglik + 2.0 * effective_df(std_data, fit.beta, lam)


def select_lambda(
    grid: LambdaGrid, scores: np.ndarray, rule: TieRule = "min_smallest"
) -> tuple[float, int]:
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(grid),):
        raise DimensionMismatchError(f"Expected {len(grid)} scores; got shape {scores.shape}")
    finite = np.isfinite(scores)
    if not np.any(finite):
        raise TuningError("Every criterion score is nonfinite")
    best = scores[finite].min()
    attaining = np.flatnonzero(finite & (scores == best))
    if rule == "min_smallest":
        index = int(attaining[0])
    elif rule == "min_largest":
        index = int(attaining[-1])
    else:
        raise ValueError(f"Unknown tie rule {rule!r}")
    return float(grid.values[index]), index


def _profile(
    criterion: str,
    grid: LambdaGrid,
    scores: np.ndarray,
    flags: list[set[str]],
    rule: TieRule = "min_smallest",
) -> CriterionProfile:
    selected, index = select_lambda(grid, scores, rule)
    return CriterionProfile(
        criterion=criterion,
        grid=grid,
        scores=scores,
        selected=selected,
        selected_index=index,
        flags=tuple(frozenset(item) for item in flags),
    )


def _path_flags(path: RidgePath) -> list[set[str]]:
    return [set() if fit.converged else {NONCONVERGENCE} for fit in path.fits]


def _loo_flags(loo: LoocvPath) -> list[set[str]]:
    flags = []
    for converged, clipped in zip(loo.converged, loo.clipped):
        item = set()
        if not np.all(converged):
            item.add(NONCONVERGENCE)
        if np.any(clipped):
            item.add(PROB_CLIPPED)
        flags.append(item)
    return flags


def tune_d(
    std_data: Dataset,
    grid: LambdaGrid,
    *,
    path: RidgePath | None = None,
    loo: LoocvPath | None = None,
) -> CriterionProfile:
    """LOOCV deviance; nonconvergent held-out fits keep their last-iterate predictions."""

    path = path or ridge_path(std_data, grid)
    loo = loo or loocv_path(std_data, path)
    scores = np.array([criterion_d(row, std_data.y) for row in loo.probabilities])
    return _profile("D", grid, scores, _loo_flags(loo))


def tune_ce(
    std_data: Dataset,
    grid: LambdaGrid,
    *,
    path: RidgePath | None = None,
    loo: LoocvPath | None = None,
    cutoff: float | None = None,
) -> CriterionProfile:
    path = path or ridge_path(std_data, grid)
    loo = loo or loocv_path(std_data, path)
    flags = _loo_flags(loo)
    scores = np.array(
        [
            np.inf if NONCONVERGENCE in item else criterion_ce(row, std_data.y, cutoff)
            for row, item in zip(loo.probabilities, flags)
        ]
    )
    return _profile("CE", grid, scores, flags, rule="min_largest")


def tune_gcv(
    std_data: Dataset,
    grid: LambdaGrid,
    *,
    mode: str = DEFAULT_GCV_MODE,
    path: RidgePath | None = None,
    loo: LoocvPath | None = None,
) -> CriterionProfile:
    """N·D/(N - df_e)² with D the in-sample deviance, or the LOOCV deviance in ``loocv`` mode."""

    if mode not in GCV_MODES:
        raise ValueError(f"GCV mode must be one of {GCV_MODES}; got {mode!r}")
    path = path or ridge_path(std_data, grid)
    if mode == "loocv":
        loo = loo or loocv_path(std_data, path)
    flags = _path_flags(path)
    scores = np.full(len(grid), np.inf)
    for index, (lam, fit) in enumerate(zip(grid.values, path.fits)):
        if not fit.converged:
            continue
        deviance = (
            criterion_d(loo.probabilities[index], std_data.y)
            if mode == "loocv"
            else -2.0 * fit.loglik
        )
        try:
            df_e = effective_df(std_data, fit.beta, lam)
            scores[index] = criterion_gcv(std_data.n, deviance, df_e)
        except TuningError:
            flags[index].add(NONCONVERGENCE)
    return _profile(f"GCV-{mode}", grid, scores, flags)


def tune_aic(
    std_data: Dataset,
    grid: LambdaGrid,
    *,
    path: RidgePath | None = None,
) -> CriterionProfile:
    path = path or ridge_path(std_data, grid)
    flags = _path_flags(path)
    scores = np.full(len(grid), np.inf)
    for index, (lam, fit) in enumerate(zip(grid.values, path.fits)):
        if not fit.converged:
            continue
        try:
            scores[index] = -2.0 * fit.loglik + 2.0 * effective_df(std_data, fit.beta, lam)
        except TuningError:
            flags[index].add(NONCONVERGENCE)
    return _profile("AIC", grid, scores, flags)


def oracle_oex(
    std_data: Dataset,
    grid: LambdaGrid,
    beta1_true: float,
    std: Standardizer,
    *,
    path: RidgePath | None = None,
) -> CriterionProfile:
    """Grid λ minimizing the squared error of the first destandardized slope."""

    if std_data.p < 2:
        raise TuningError("The explanation oracle needs at least one covariate")
    path = path or ridge_path(std_data, grid)
    flags = _path_flags(path)
    scores = np.array(
        [
            (std.destandardize_beta(fit.beta)[1] - beta1_true) ** 2 if fit.converged else np.inf
            for fit in path.fits
        ]
    )
    return _profile("OEX", grid, scores, flags)


def oracle_op(
    std_data: Dataset,
    grid: LambdaGrid,
    pi_true: np.ndarray,
    *,
    path: RidgePath | None = None,
) -> CriterionProfile:
    """Grid λ minimizing Σ(π̂_i - π_i)² against the true probabilities."""

    pi_true = np.asarray(pi_true, dtype=float)
    if pi_true.shape != (std_data.n,):
        raise DimensionMismatchError(f"True probabilities must have length {std_data.n}")
    path = path or ridge_path(std_data, grid)
    flags = _path_flags(path)
    scores = np.array(
        [
            float(np.sum((expit(std_data.X @ fit.beta) - pi_true) ** 2))
            if fit.converged
            else np.inf
            for fit in path.fits
        ]
    )
    return _profile("OP", grid, scores, flags)


@dataclass(frozen=True, eq=False)
class RcvSelections:
    """Per-repetition 10-fold CV minimizers."""

    lambdas: np.ndarray
    seeds: np.ndarray
    stratified: bool
    flags: frozenset[str] = field(default_factory=frozenset)

    def quantile(self, theta: float) -> float:
        if not 0 < theta < 1:
            raise ValueError(f"Quantile must lie in (0, 1); got {theta}")
        return float(np.quantile(self.lambdas, theta, method="linear"))


def kfold_deviance_profile(
    std_data: Dataset, path: RidgePath, assignments: list[FoldAssignment]
) -> np.ndarray:
    """Cross-validated deviance per repetition (rows) and grid point (columns)."""

    n_folds = assignments[0].n_folds
    masks = np.vstack(
        [
            assignment.folds[np.newaxis, :] == fold
            for assignment in assignments
            for fold in range(n_folds)
        ]
    )
    deviances = np.zeros((len(assignments), len(path.grid)))
    for index, (lam, fit) in enumerate(zip(path.grid.values, path.fits)):
        spec = PenaltySpec.create(lam, std_data.p, rescale_s=path.rescale_s)
        betas, _, _ = _held_out(std_data, spec, fit.beta, masks)
        eta = betas @ std_data.X.T
        held = np.where(masks, expit(eta), np.nan).reshape(len(assignments), n_folds, std_data.n)
        pi = np.nansum(held, axis=1)
        pi, _ = clip_probabilities(pi)
        y = std_data.y
        deviances[:, index] = -2.0 * np.sum(y * np.log(pi) + (1.0 - y) * np.log1p(-pi), axis=1)
    return deviances


def rcv_selections(
    std_data: Dataset,
    grid: LambdaGrid,
    *,
    reps: int = RCV_REPETITIONS,
    rng: np.random.Generator,
    path: RidgePath | None = None,
    n_folds: int = CV_FOLDS,
) -> RcvSelections:
    if reps < 1:
        raise ValueError("RCV needs at least one repetition")
    path = path or ridge_path(std_data, grid)
    seeds = rng.integers(0, 2**32 - 1, size=reps, dtype=np.int64)
    assignments = [FoldAssignment.draw(std_data.y, int(seed), n_folds) for seed in seeds]
    deviances = kfold_deviance_profile(std_data, path, assignments)
    lambdas = np.array([select_lambda(grid, row)[0] for row in deviances])
    stratified = all(assignment.stratified for assignment in assignments)
    return RcvSelections(
        lambdas=lambdas,
        seeds=seeds,
        stratified=stratified,
        flags=frozenset() if stratified else frozenset({UNSTRATIFIED_FOLDS}),
    )


def rcv(
    std_data: Dataset,
    grid: LambdaGrid,
    *,
    reps: int = RCV_REPETITIONS,
    theta: float = 0.5,
    rng: np.random.Generator,
    path: RidgePath | None = None,
) -> float:
    """θ-quantile of the per-repetition 10-fold CV deviance minimizers."""

    return rcv_selections(std_data, grid, reps=reps, rng=rng, path=path).quantile(theta)

