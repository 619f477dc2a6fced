"""Simulation data generation: correlated latent normals, mixed-type covariates, calibration."""

from __future__ import annotations

import itertools
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from functools import cache
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from .config import CALIBRATION_DRAWS, CALIBRATION_SEED, CALIBRATION_VERSION, VALIDATION_SIZE
from .glm import expit
from .models import Dataset, derive_seed, stable_id

CovariateKind = Literal[
    "binary_threshold",
    "ordinal_two_cut",
    "linear_floor",
    "exp_floor_max",
    "exp_scale",
    "shifted_square",
]
CONTINUOUS_KINDS = frozenset({"linear_floor", "exp_floor_max", "exp_scale", "shifted_square"})
EFFECT_LOG_ODDS = 0.69
PRINTED_BETA10 = 0.36
EIGENVALUE_FLOOR = 1e-6
REPAIR_PASSES = 50

SAMPLE_SIZES = (100, 250, 500)
COVARIATE_COUNTS = (2, 5, 10)
EFFECT_MULTIPLIERS = (0.5, 1.0)
EVENT_RATES = (0.1, 0.25)
NOISE_COLUMNS = tuple(range(10, 15))


class CalibrationError(RuntimeError):
    """Raised when calibration constants are missing, stale, or degenerate."""


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    kind: CovariateKind
    params: tuple[float, ...]
    beta: float | None
    is_noise: bool = False

    @property
    def continuous(self) -> bool:
        return self.kind in CONTINUOUS_KINDS

    def transform(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "binary_threshold":
            (threshold,) = self.params
            return (z < threshold).astype(float)
        if self.kind == "ordinal_two_cut":
            low, high = self.params
            return (z >= low).astype(float) + (z >= high).astype(float)
        if self.kind == "linear_floor":
            scale, shift = self.params
            return np.floor(scale * z + shift)
        if self.kind == "exp_floor_max":
            scale, shift = self.params
            return np.floor(np.maximum(0.0, scale * np.exp(z) - shift))
        if self.kind == "exp_scale":
            scale, shift = self.params
            return np.exp(scale * z + shift)
        if self.kind == "shifted_square":
            (shift,) = self.params
            return 0.01 * np.floor(100.0 * (z + shift) ** 2)
        raise ValueError(f"Unknown covariate kind {self.kind!r}")


# x4 uses a zero threshold, which gives a balanced binary covariate.
# x10 shares x7's transform, so its effect follows the sextile rule unless the fixed 0.36
# is requested.
COVARIATES = (
    CovariateSpec("x1", "binary_threshold", (0.84,), 2.08),
    CovariateSpec("x2", "binary_threshold", (-0.35,), 1.39),
    CovariateSpec("x3", "binary_threshold", (0.0,), 0.69),
    CovariateSpec("x4", "binary_threshold", (0.0,), 0.69),
    CovariateSpec("x5", "ordinal_two_cut", (-1.2, 0.75), 0.35),
    CovariateSpec("x6", "ordinal_two_cut", (0.5, 1.5), 0.35),
    CovariateSpec("x7", "linear_floor", (10.0, 55.0), None),
    CovariateSpec("x8", "exp_floor_max", (100.0, 20.0), None),
    CovariateSpec("x9", "exp_floor_max", (80.0, 20.0), None),
    CovariateSpec("x10", "linear_floor", (10.0, 55.0), None),
    CovariateSpec("x11", "exp_scale", (0.4, 3.0), 0.0, is_noise=True),
    CovariateSpec("x12", "exp_scale", (0.5, 1.5), 0.0, is_noise=True),
    CovariateSpec("x13", "shifted_square", (4.0,), 0.0, is_noise=True),
    CovariateSpec("x14", "linear_floor", (10.0, 55.0), 0.0, is_noise=True),
    CovariateSpec("x15", "linear_floor", (10.0, 55.0), 0.0, is_noise=True),
)

# Legible correlation mentions per latent variable (1-based). Pairs mentioned more than once
# are averaged.
LATENT_CORRELATIONS: dict[int, tuple[tuple[int, float], ...]] = {
    1: ((2, 0.5), (3, 0.5), (7, 0.5), (14, 0.5)),
    2: ((1, 0.5), (14, 0.3)),
    3: ((1, 0.5), (4, -0.5), (5, -0.3), (5, 0.5), (7, 0.3), (8, 0.5), (9, 0.3), (14, 0.5)),
    4: ((3, -0.3), (8, 0.3), (9, 0.3)),
    5: ((7, -0.3), (8, 0.3), (11, -0.5)),
    6: ((1, 0.5), (4, 0.3), (4, 0.5), (5, 0.3), (9, 0.5), (12, -0.3), (14, 0.5)),
    7: ((4, 0.3), (5, 0.3), (8, 0.5), (14, 0.3)),
    8: ((4, 0.3), (5, 0.3), (14, 0.3)),
    10: ((6, -0.5), (12, 0.3), (15, 0.5)),
    11: ((8, -0.3), (15, 0.5)),
    13: ((1, 0.5), (2, 0.3), (4, 0.5), (8, 0.5), (9, 0.3)),
    14: ((11, 0.5), (12, 0.5)),
}


@dataclass(frozen=True, eq=False)
class LatentCorrelation:
    matrix: np.ndarray
    cholesky: np.ndarray
    assembled: np.ndarray
    repaired_entries: tuple[tuple[int, int, float, float], ...]
    report_hash: str

    def report(self) -> dict[str, object]:
        return {
            "report_hash": self.report_hash,
            "min_eigenvalue_assembled": float(np.linalg.eigvalsh(self.assembled).min()),
            "min_eigenvalue_repaired": float(np.linalg.eigvalsh(self.matrix).min()),
            "repaired_entries": [
                {"i": i + 1, "j": j + 1, "assembled": before, "repaired": after}
                for i, j, before, after in self.repaired_entries
            ],
        }


def _repair(matrix: np.ndarray) -> np.ndarray:
    repaired = matrix
    for _ in range(REPAIR_PASSES):
        eigenvalues, vectors = np.linalg.eigh(repaired)
        if eigenvalues.min() >= EIGENVALUE_FLOOR:
            break
        clipped = (vectors * np.maximum(eigenvalues, 10.0 * EIGENVALUE_FLOOR)) @ vectors.T
        scale = 1.0 / np.sqrt(np.diag(clipped))
        repaired = clipped * np.outer(scale, scale)
        repaired = (repaired + repaired.T) / 2.0
        np.fill_diagonal(repaired, 1.0)
    return repaired


def build_correlation(
    entries: Mapping[int, Iterable[tuple[int, float]]] | None = None, size: int = 15
) -> LatentCorrelation:
    """Assemble, symmetrize by averaging, and repair to positive definite."""

    entries = LATENT_CORRELATIONS if entries is None else entries
    mentions: dict[tuple[int, int], list[float]] = {}
    for row, pairs in entries.items():
        for column, value in pairs:
            if row == column:
                continue
            key = (min(row, column) - 1, max(row, column) - 1)
            mentions.setdefault(key, []).append(float(value))
    assembled = np.eye(size)
    for (i, j), values in sorted(mentions.items()):
        assembled[i, j] = assembled[j, i] = float(np.mean(values))
    matrix = _repair(assembled)
    repaired = tuple(
        (int(i), int(j), float(assembled[i, j]), float(matrix[i, j]))
        for i, j in zip(*np.triu_indices(size, k=1))
        if abs(matrix[i, j] - assembled[i, j]) > 1e-12
    )
    digest = stable_id(json.dumps(np.round(matrix, 12).tolist()))
    return LatentCorrelation(
        matrix=matrix,
        cholesky=np.linalg.cholesky(matrix),
        assembled=assembled,
        repaired_entries=repaired,
        report_hash=digest,
    )


@cache
def default_correlation() -> LatentCorrelation:
    return build_correlation()


def sample_latent(n: int, rng: np.random.Generator, correlation: LatentCorrelation) -> np.ndarray:
    return rng.standard_normal((n, correlation.matrix.shape[0])) @ correlation.cholesky.T


def transform_latent(z: np.ndarray) -> np.ndarray:
    return np.column_stack([spec.transform(z[:, index]) for index, spec in enumerate(COVARIATES)])


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    k: int
    a: float
    ey_target: float
    noise: bool
    reps: int = 200
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 10:
            raise ValueError(f"Scenario sample size must be at least 10; got {self.n}")
        if not 1 <= self.k <= 10:
            raise ValueError(f"Scenario needs 1..10 effect covariates; got {self.k}")
        if not 0 < self.ey_target < 1:
            raise ValueError(f"Target event rate must lie in (0, 1); got {self.ey_target}")
        if self.a < 0:
            raise ValueError(f"Effect multiplier must be nonnegative; got {self.a}")

    @property
    def scenario_id(self) -> str:
        return f"N{self.n}-K{self.k}-a{self.a:g}-ey{self.ey_target:g}-noise{int(self.noise)}"

    @property
    def intercept_key(self) -> str:
        return f"K{self.k}-a{self.a:g}-ey{self.ey_target:g}"

    @property
    def columns(self) -> tuple[int, ...]:
        return tuple(range(self.k)) + (NOISE_COLUMNS if self.noise else ())

    @classmethod
    def parse(cls, text: str, *, reps: int = 200, master_seed: int = 0) -> ScenarioConfig:
        """Parse ``N,K,a,ey,noise`` as used on the command line."""

        parts = [part.strip() for part in text.split(",")]
        if len(parts) != 5:
            raise ValueError(f"Scenario must be N,K,a,ey,noise; got {text!r}")
        noise = parts[4].lower()
        if noise not in {"0", "1", "true", "false", "yes", "no"}:
            raise ValueError(f"Noise flag must be boolean; got {parts[4]!r}")
        return cls(
            n=int(parts[0]),
            k=int(parts[1]),
            a=float(parts[2]),
            ey_target=float(parts[3]),
            noise=noise in {"1", "true", "yes"},
            reps=reps,
            master_seed=master_seed,
        )


def all_scenarios(*, reps: int = 200, master_seed: int = 0) -> tuple[ScenarioConfig, ...]:
    return tuple(
        ScenarioConfig(n, k, a, ey, noise, reps=reps, master_seed=master_seed)
        for k, n, a, ey, noise in itertools.product(
            COVARIATE_COUNTS, SAMPLE_SIZES, EFFECT_MULTIPLIERS, EVENT_RATES, (False, True)
        )
    )


@dataclass(frozen=True)
class CovariateCalibration:
    name: str
    q1: float
    q3: float
    bound: float
    spread: float
    beta: float


@dataclass(frozen=True, eq=False)
class Calibration:
    covariates: tuple[CovariateCalibration, ...]
    intercepts: Mapping[str, float]
    seed: int
    draws: int
    correlation_hash: str
    version: int = CALIBRATION_VERSION

    @property
    def bounds(self) -> np.ndarray:
        return np.array([item.bound for item in self.covariates])

    @property
    def betas(self) -> np.ndarray:
        return np.array([item.beta for item in self.covariates])

    def intercept(self, scenario: ScenarioConfig) -> float:
        try:
            return self.intercepts[scenario.intercept_key]
        except KeyError as error:
            raise CalibrationError(f"No calibrated intercept for {scenario.scenario_id}") from error

    def covers(self, scenarios: Iterable[ScenarioConfig]) -> bool:
        return all(scenario.intercept_key in self.intercepts for scenario in scenarios)


def calibration_sample(
    correlation: LatentCorrelation, draws: int = CALIBRATION_DRAWS, seed: int = CALIBRATION_SEED
) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return transform_latent(sample_latent(draws, rng, correlation))


def truncate(X: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    return np.minimum(X, bounds)


def calibrate_effects(
    sample: np.ndarray, *, printed_beta10: bool = False
) -> tuple[CovariateCalibration, ...]:
    """Quartile truncation bounds and effects scaled to 0.69 log-odds between sextiles 1 and 5."""

    calibrated = []
    for index, spec in enumerate(COVARIATES):
        column = sample[:, index]
        q1, q3 = (float(value) for value in np.quantile(column, [0.25, 0.75]))
        bound = q3 + 5.0 * (q3 - q1) if spec.continuous else float("inf")
        low, high = np.quantile(np.minimum(column, bound), [1.0 / 6.0, 5.0 / 6.0])
        spread = float(high - low)
        if spec.beta is not None:
            beta = spec.beta
        elif spec.name == "x10" and printed_beta10:
            beta = PRINTED_BETA10
        else:
            if not spread > 0:
                raise CalibrationError(f"Sextile spread of {spec.name} is degenerate")
            beta = EFFECT_LOG_ODDS / spread
        calibrated.append(CovariateCalibration(spec.name, q1, q3, bound, spread, float(beta)))
    return tuple(calibrated)


def calibrate_intercept(
    scenario: ScenarioConfig, truncated_sample: np.ndarray, betas: np.ndarray
) -> float:
    """β0 such that the mean event probability over the calibration sample hits the target."""

    columns = list(scenario.columns)
    linear = scenario.a * (truncated_sample[:, columns] @ betas[columns])

    def excess(beta0: float) -> float:
        return float(np.mean(expit(beta0 + linear))) - scenario.ey_target

    try:
        return float(brentq(excess, -30.0, 30.0, xtol=1e-10))
    except ValueError as error:
        message = f"Cannot bracket the intercept for {scenario.scenario_id}"
        raise CalibrationError(message) from error


def calibrate(
    scenarios: Iterable[ScenarioConfig],
    *,
    correlation: LatentCorrelation | None = None,
    draws: int = CALIBRATION_DRAWS,
    seed: int = CALIBRATION_SEED,
    printed_beta10: bool = False,
    existing: Calibration | None = None,
) -> Calibration:
    correlation = correlation or default_correlation()
    if existing is not None and (existing.seed, existing.draws, existing.correlation_hash) != (
        seed,
        draws,
        correlation.report_hash,
    ):
        raise CalibrationError("Existing calibration was drawn with different settings")
    sample = calibration_sample(correlation, draws, seed)
    covariates = (
        existing.covariates
        if existing is not None
        else calibrate_effects(sample, printed_beta10=printed_beta10)
    )
    calibration = Calibration(
        covariates=covariates,
        intercepts=dict(existing.intercepts) if existing is not None else {},
        seed=seed,
        draws=draws,
        correlation_hash=correlation.report_hash,
    )
    truncated = truncate(sample, calibration.bounds)
    intercepts = dict(calibration.intercepts)
    for scenario in scenarios:
        if scenario.intercept_key not in intercepts:
            intercepts[scenario.intercept_key] = calibrate_intercept(
                scenario, truncated, calibration.betas
            )
    return replace(calibration, intercepts=intercepts)


@dataclass(frozen=True, eq=False)
class GeneratedDataset:
    data: Dataset
    pi_true: np.ndarray
    beta_true: np.ndarray
    beta0: float
    columns: tuple[str, ...] = field(default_factory=tuple)

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([[self.beta0], self.beta_true])


def _draw(
    scenario: ScenarioConfig,
    n: int,
    rng: np.random.Generator,
    calibration: Calibration,
    correlation: LatentCorrelation,
) -> GeneratedDataset:
    if calibration.correlation_hash != correlation.report_hash:
        raise CalibrationError("Calibration was computed for a different correlation matrix")
    columns = list(scenario.columns)
    latent = sample_latent(n, rng, correlation)
    X = truncate(transform_latent(latent), calibration.bounds)[:, columns]
    beta_true = scenario.a * calibration.betas[columns]
    beta0 = calibration.intercept(scenario)
    pi_true = expit(beta0 + X @ beta_true)
    y = rng.binomial(1, pi_true).astype(float)
    return GeneratedDataset(
        data=Dataset.from_covariates(X, y),
        pi_true=pi_true,
        beta_true=beta_true,
        beta0=beta0,
        columns=tuple(COVARIATES[index].name for index in columns),
    )


def generate_dataset(
    scenario: ScenarioConfig,
    replicate: int,
    calibration: Calibration,
    *,
    correlation: LatentCorrelation | None = None,
) -> GeneratedDataset:
    rng = np.random.default_rng(
        derive_seed(scenario.master_seed, scenario.scenario_id, replicate, "train")
    )
    return _draw(scenario, scenario.n, rng, calibration, correlation or default_correlation())


def generate_validation(
    scenario: ScenarioConfig,
    rng: np.random.Generator,
    calibration: Calibration,
    *,
    correlation: LatentCorrelation | None = None,
    size: int = VALIDATION_SIZE,
) -> GeneratedDataset:
    return _draw(scenario, size, rng, calibration, correlation or default_correlation())


ILLUSTRATIVE_INTERCEPT = -3.05
ILLUSTRATIVE_EFFECT = 1.0
ILLUSTRATIVE_EXPOSURE = 0.8


def illustrative_generator(n: int = 100, *, rng: np.random.Generator) -> GeneratedDataset:
    """Binary exposure with E(X) = 0.8 and a rare outcome, π = expit(-3.05 + x)."""

    x = rng.binomial(1, ILLUSTRATIVE_EXPOSURE, size=n).astype(float)
    pi_true = expit(ILLUSTRATIVE_INTERCEPT + ILLUSTRATIVE_EFFECT * x)
    y = rng.binomial(1, pi_true).astype(float)
    return GeneratedDataset(
        data=Dataset.from_covariates(x, y),
        pi_true=pi_true,
        beta_true=np.array([ILLUSTRATIVE_EFFECT]),
        beta0=ILLUSTRATIVE_INTERCEPT,
        columns=("x",),
    )
