"""Logistic likelihood, score, Fisher information, and the shared Newton driver."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit as _expit

from .config import (
    GRADIENT_TOLERANCE,
    MAX_HALVINGS,
    MAX_ITERATIONS,
    PROBABILITY_EPSILON,
    RCOND_MINIMUM,
    STEP_TOLERANCE,
)
from .models import (
    PROB_CLIPPED,
    SEPARATION_SUSPECTED,
    STEP_HALVING_USED,
    Dataset,
    DimensionMismatchError,
    FitResult,
)

SEPARATION_COEFFICIENT_BOUND = 15.0


class FitError(RuntimeError):
    """Raised when a fit cannot deliver a converged estimate; carries the last iterate."""

    def __init__(self, message: str, result: FitResult | None = None) -> None:
        super().__init__(message)
        self.result = result


class NonConvergenceError(FitError):
    """Raised when the iteration budget runs out, typically under separation."""


class SingularInformationError(FitError):
    """Raised when the free-coordinate information block is numerically singular."""


def expit(u: np.ndarray | float) -> np.ndarray | float:
    return _expit(u)


def clip_probabilities(pi: np.ndarray) -> tuple[np.ndarray, bool]:
    clipped = np.clip(pi, PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON)
    return clipped, bool(np.any(clipped != pi))


def _offset(data: Dataset, offset: np.ndarray | None) -> np.ndarray:
    if offset is None:
        return np.zeros(data.n)
    offset = np.asarray(offset, dtype=float)
    if offset.shape != (data.n,):
        raise DimensionMismatchError(f"Offset must have length {data.n}; got {offset.shape}")
    return offset


def linear_predictor(
    data: Dataset, beta: np.ndarray, offset: np.ndarray | None = None
) -> np.ndarray:
    return data.X @ data.check_beta(beta) + _offset(data, offset)


def _bernoulli_loglik(y: np.ndarray, w: np.ndarray, pi: np.ndarray) -> tuple[float, bool]:
    safe, _ = clip_probabilities(pi)
    terms = y * np.log(safe) + (1.0 - y) * np.log1p(-safe)
    return float(w @ terms), bool(np.any((safe != pi) & (w > 0)))


def log_likelihood(data: Dataset, beta: np.ndarray, offset: np.ndarray | None = None) -> float:
    pi = expit(linear_predictor(data, beta, offset))
    value, _ = _bernoulli_loglik(data.y, data.w, pi)
    return value


def score_and_fisher(
    data: Dataset, beta: np.ndarray, offset: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    pi = expit(linear_predictor(data, beta, offset))
    gradient = data.X.T @ (data.w * (data.y - pi))
    fisher = (data.X.T * (data.w * pi * (1.0 - pi))) @ data.X
    return gradient, (fisher + fisher.T) / 2.0


@dataclass(frozen=True)
class Evaluation:
    """Objective value with its gradient and the (positive) information matrix."""

    value: float
    gradient: np.ndarray
    information: np.ndarray
    clipped: bool = False


@dataclass(frozen=True)
class NewtonOutcome:
    beta: np.ndarray
    evaluation: Evaluation
    converged: bool
    singular: bool
    iterations: int
    halving_used: bool
    clipped: bool
    gradient_norm: float


def _newton_step(information: np.ndarray, gradient: np.ndarray) -> np.ndarray | None:
    if not np.all(np.isfinite(information)) or not np.all(np.isfinite(gradient)):
        return None
    eigenvalues = np.linalg.eigvalsh(information)
    largest = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
    if largest <= 0.0 or float(eigenvalues.min()) / largest < RCOND_MINIMUM:
        return None
    try:
        factor = linalg.cho_factor(information, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    return linalg.cho_solve(factor, gradient, check_finite=False)


def newton_maximize(
    objective: Callable[[np.ndarray], Evaluation],
    init: np.ndarray,
    *,
    free: np.ndarray | None = None,
    gradient_tolerance: float = GRADIENT_TOLERANCE,
    step_tolerance: float = STEP_TOLERANCE,
    max_iterations: int = MAX_ITERATIONS,
    max_halvings: int = MAX_HALVINGS,
) -> NewtonOutcome:
    """Maximize a concave objective by Newton steps with step-halving.

    Only coordinates in ``free`` move; the rest stay at ``init``. Convergence needs both the
    free gradient max-norm and the next step max-norm under their tolerances.
    """

    beta = np.array(init, dtype=float)
    free = np.arange(beta.size) if free is None else np.asarray(free, dtype=int)
    evaluation = objective(beta)
    halving_used = False
    clipped = evaluation.clipped
    iteration = 0
    while True:
        gradient = evaluation.gradient[free]
        gradient_norm = float(np.max(np.abs(gradient))) if free.size else 0.0
        if free.size == 0:
            step = np.zeros(0)
        else:
            step = _newton_step(evaluation.information[np.ix_(free, free)], gradient)
        if step is None:
            return NewtonOutcome(
                beta, evaluation, False, True, iteration, halving_used, clipped, gradient_norm
            )
        step_norm = float(np.max(np.abs(step))) if step.size else 0.0
        if gradient_norm <= gradient_tolerance and step_norm <= step_tolerance:
            return NewtonOutcome(
                beta, evaluation, True, False, iteration, halving_used, clipped, gradient_norm
            )
        if iteration >= max_iterations:
            return NewtonOutcome(
                beta, evaluation, False, False, iteration, halving_used, clipped, gradient_norm
            )
        iteration += 1
        slack = 1e-12 * (1.0 + abs(evaluation.value))
        candidate = beta.copy()
        candidate[free] += step
        trial = objective(candidate)
        halvings = 0
        while halvings < max_halvings and not (
            np.isfinite(trial.value) and trial.value >= evaluation.value - slack
        ):
            step = step / 2.0
            halvings += 1
            candidate = beta.copy()
            candidate[free] += step
            trial = objective(candidate)
        halving_used = halving_used or halvings > 0
        beta, evaluation = candidate, trial
        clipped = clipped or evaluation.clipped


def likelihood_objective(
    data: Dataset, offset: np.ndarray | None = None
) -> Callable[[np.ndarray], Evaluation]:
    offset = _offset(data, offset)

    def evaluate(beta: np.ndarray) -> Evaluation:
        pi = expit(data.X @ beta + offset)
        value, clipped = _bernoulli_loglik(data.y, data.w, pi)
        gradient = data.X.T @ (data.w * (data.y - pi))
        information = (data.X.T * (data.w * pi * (1.0 - pi))) @ data.X
        return Evaluation(value, gradient, (information + information.T) / 2.0, clipped)

    return evaluate


def outcome_flags(outcome: NewtonOutcome) -> frozenset[str]:
    flags = set()
    if outcome.halving_used:
        flags.add(STEP_HALVING_USED)
    if outcome.clipped:
        flags.add(PROB_CLIPPED)
    if not outcome.converged and (
        outcome.clipped or float(np.max(np.abs(outcome.beta))) > SEPARATION_COEFFICIENT_BOUND
    ):
        flags.add(SEPARATION_SUSPECTED)
    return frozenset(flags)


def fit_ml(
    data: Dataset,
    offset: np.ndarray | None = None,
    frozen: Sequence[int] | None = None,
    init: np.ndarray | None = None,
    *,
    max_iterations: int = MAX_ITERATIONS,
) -> FitResult:
    """Weighted maximum likelihood with an optional offset and frozen coordinates."""

    init = np.zeros(data.p) if init is None else data.check_beta(np.array(init, dtype=float))
    frozen_set = set() if frozen is None else {int(index) for index in frozen}
    if any(index < 0 or index >= data.p for index in frozen_set):
        raise DimensionMismatchError(f"Frozen indices {sorted(frozen_set)} outside 0..{data.p - 1}")
    free = np.array([index for index in range(data.p) if index not in frozen_set], dtype=int)
    outcome = newton_maximize(
        likelihood_objective(data, offset), init, free=free, max_iterations=max_iterations
    )
    flags = outcome_flags(outcome)
    result = FitResult(
        beta=outcome.beta,
        loglik=outcome.evaluation.value,
        fisher=outcome.evaluation.information,
        converged=outcome.converged,
        iterations=outcome.iterations,
        flags=flags,
        gradient_norm=outcome.gradient_norm,
    )
    if outcome.converged:
        return result
    if outcome.singular and SEPARATION_SUSPECTED not in flags:
        raise SingularInformationError(
            f"Information block is singular after {outcome.iterations} iterations", result
        )
    raise NonConvergenceError(
        f"Newton iterations did not converge within {max_iterations} steps", result
    )


@dataclass(frozen=True, eq=False)
class BatchFit:
    """One ML fit per weight row, all on the same design."""

    beta: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    clipped: np.ndarray


def _batch_evaluate(
    X: np.ndarray, y: np.ndarray, weights: np.ndarray, beta: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pi = expit(beta @ X.T)
    safe, _ = clip_probabilities(pi)
    clipped = np.any((safe != pi) & (weights > 0), axis=1)
    value = np.sum(weights * (y * np.log(safe) + (1.0 - y) * np.log1p(-safe)), axis=1)
    gradient = (weights * (y - pi)) @ X
    curvature = weights * pi * (1.0 - pi)
    information = (X.T[np.newaxis] * curvature[:, np.newaxis, :]) @ X
    return value, gradient, information, clipped


def _batch_solve(information: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(information, gradient[..., np.newaxis])[..., 0]
    except np.linalg.LinAlgError:
        return np.einsum("bij,bj->bi", np.linalg.pinv(information, hermitian=True), gradient)


def fit_ml_batch(
    data: Dataset,
    weights: np.ndarray,
    init: np.ndarray,
    *,
    max_iterations: int = MAX_ITERATIONS,
    max_halvings: int = MAX_HALVINGS,
) -> BatchFit:
    """Run independent weighted ML fits, one per row of ``weights``, sharing one design.

    Used for held-out fits where each member zeroes the weights of its held-out rows.
    Members never raise; nonconvergent members keep their last iterate.
    """

    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 2 or weights.shape[1] != data.n:
        raise DimensionMismatchError(f"Weights must be B x {data.n}; got {weights.shape}")
    members = weights.shape[0]
    beta = np.array(np.broadcast_to(init, (members, data.p)), dtype=float)
    converged = np.zeros(members, dtype=bool)
    iterations = np.zeros(members, dtype=int)
    clipped = np.zeros(members, dtype=bool)
    X, y = data.X, data.y
    active = np.arange(members)
    value, gradient, information, was_clipped = _batch_evaluate(X, y, weights, beta)
    clipped |= was_clipped
    for _ in range(max_iterations + 1):
        step = _batch_solve(information, gradient)
        finished = (np.max(np.abs(gradient), axis=1) <= GRADIENT_TOLERANCE) & (
            np.max(np.abs(step), axis=1) <= STEP_TOLERANCE
        )
        converged[active[finished]] = True
        budget = iterations[active] >= max_iterations
        keep = ~finished & ~budget & np.all(np.isfinite(step), axis=1)
        active, step = active[keep], step[keep]
        value, gradient, information = value[keep], gradient[keep], information[keep]
        if active.size == 0:
            break
        iterations[active] += 1
        slack = 1e-12 * (1.0 + np.abs(value))
        candidate = beta[active] + step
        trial = _batch_evaluate(X, y, weights[active], candidate)
        for _halving in range(max_halvings):
            worse = ~(np.isfinite(trial[0]) & (trial[0] >= value - slack))
            if not np.any(worse):
                break
            step[worse] /= 2.0
            candidate[worse] = beta[active[worse]] + step[worse]
            retry = _batch_evaluate(X, y, weights[active[worse]], candidate[worse])
            for target, update in zip(trial, retry):
                target[worse] = update
        beta[active] = candidate
        value, gradient, information, was_clipped = trial
        clipped[active] |= was_clipped
    return BatchFit(beta=beta, converged=converged, iterations=iterations, clipped=clipped)
