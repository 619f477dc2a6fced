"""The two fixed binary-exposure datasets and the repeated-generation tuning experiment."""

from __future__ import annotations

import json
from collections.abc import Iterator, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pyarrow as pa

from .config import DEFAULT_MASTER_SEED, DEFAULT_WORKERS, ILLUSTRATE_REPS, SCHEMA_VERSION
from .estimators import FitSettings, MethodWorkspace
from .glm import clip_probabilities
from .models import Dataset, derive_seed
from .penalty import ConstantColumnError
from .separation import detect_separation
from .simgen import ILLUSTRATIVE_EFFECT, illustrative_generator
from .storage import write_csv, write_json

# (x, y) -> count
ILLUSTRATIVE_CELLS: dict[str, dict[tuple[int, int], int]] = {
    "dataset1": {(0, 0): 20, (0, 1): 0, (1, 0): 71, (1, 1): 9},
    "dataset2": {(0, 0): 19, (0, 1): 1, (1, 0): 71, (1, 1): 9},
}
TABLE_METHODS = ("FC", "D", "IP")
DEVIATION_METHODS = ("FC", "IP", "OEX", "D")
PROGRESS_EVERY = 100


def cell_dataset(cells: Mapping[tuple[int, int], int]) -> Dataset:
    """Expand (x, y) cell counts into one row per observation, ordered by cell."""

    xs: list[float] = []
    ys: list[float] = []
    for (x, y), count in sorted(cells.items()):
        xs.extend([float(x)] * count)
        ys.extend([float(y)] * count)
    return Dataset.from_covariates(np.array(xs), np.array(ys))


def illustrative_datasets() -> dict[str, Dataset]:
    return {name: cell_dataset(cells) for name, cells in ILLUSTRATIVE_CELLS.items()}


def fixed_dataset_rows(settings: FitSettings | None = None) -> list[dict[str, object]]:
    """FC, D-tuned and IP coefficients for both fixed datasets, on the original covariate scale."""

    settings = settings or FitSettings()
    rows = []
    for name, data in illustrative_datasets().items():
        separated = detect_separation(data).separated
        workspace = MethodWorkspace(data, settings, separated=separated)
        for method in TABLE_METHODS:
            fit = workspace.fit(method)
            rows.append(
                {
                    "dataset": name,
                    "method": method,
                    "beta0": float(fit.beta[0]),
                    "beta1": float(fit.beta[1]),
                    "lambda_star": fit.lambda_star,
                    "boundary_hit": fit.boundary_hit,
                    "converged": fit.converged,
                    "separated": separated,
                    "flags": ";".join(sorted(fit.flags)),
                }
            )
    return rows


def _deviance_components(probabilities: np.ndarray, y: np.ndarray) -> np.ndarray:
    pi, _ = clip_probabilities(probabilities)
    return -2.0 * (y * np.log(pi) + (1.0 - y) * np.log1p(-pi))


def loocv_profile_rows(
    settings: FitSettings | None = None,
) -> tuple[list[dict[str, object]], list[dict[str, object]]]:
    """LOOCV deviance profiles and per-(x, y)-cell summed deviance components over the grid."""

    settings = settings or FitSettings()
    profiles: list[dict[str, object]] = []
    components: list[dict[str, object]] = []
    for name, data in illustrative_datasets().items():
        workspace = MethodWorkspace(data, settings)
        contributions = _deviance_components(workspace.loo.probabilities, data.y)
        x = data.X[:, 1]
        cells = sorted({(int(xi), int(yi)) for xi, yi in zip(x, data.y)})
        for row, lam in enumerate(settings.grid.values):
            profiles.append(
                {"dataset": name, "lambda": float(lam), "deviance": float(contributions[row].sum())}
            )
            for cell_x, cell_y in cells:
                members = (x == cell_x) & (data.y == cell_y)
                components.append(
                    {
                        "dataset": name,
                        "lambda": float(lam),
                        "x": cell_x,
                        "y": cell_y,
                        "count": int(members.sum()),
                        "deviance": float(contributions[row, members].sum()),
                    }
                )
    return profiles, components


@dataclass(frozen=True)
class IllustrateTask:
    seed: int
    replicate: int
    n: int
    settings: FitSettings


@dataclass(frozen=True)
class IllustrateReplicate:
    replicate: int
    lambda_star: float
    boundary_low: bool
    boundary_high: bool
    separated: bool
    beta1: dict[str, float]
    converged: dict[str, bool]


def run_illustrate_replicate(task: IllustrateTask) -> IllustrateReplicate | None:
    """Tune D on one generated dataset; None when the draw has no events or a constant exposure."""

    rng = np.random.default_rng(derive_seed(task.seed, "illustrate", task.replicate, "train"))
    generated = illustrative_generator(task.n, rng=rng)
    if generated.data.y.sum() == 0:
        return None
    separated = detect_separation(generated.data).separated
    try:
        workspace = MethodWorkspace(
            generated.data,
            task.settings,
            beta1_true=float(generated.beta_true[0]),
            pi_true=generated.pi_true,
            separated=separated,
        )
    except ConstantColumnError:
        return None
    fits = {method: workspace.fit(method) for method in DEVIATION_METHODS}
    d_fit = fits["D"]
    values = task.settings.grid.values
    return IllustrateReplicate(
        replicate=task.replicate,
        lambda_star=float(d_fit.lambda_star),
        boundary_low=bool(np.isclose(d_fit.lambda_star, values[0], rtol=1e-12, atol=0.0)),
        boundary_high=bool(np.isclose(d_fit.lambda_star, values[-1], rtol=1e-12, atol=0.0)),
        separated=separated,
        beta1={method: float(fit.beta[1]) for method, fit in fits.items()},
        converged={method: fit.converged for method, fit in fits.items()},
    )


def _map(tasks: Sequence[IllustrateTask], workers: int) -> Iterator[IllustrateReplicate | None]:
    if workers <= 1:
        yield from map(run_illustrate_replicate, tasks)
        return
    with ProcessPoolExecutor(max_workers=workers) as executor:
        yield from executor.map(run_illustrate_replicate, tasks)


@dataclass(frozen=True)
class IllustrateReport:
    out: str
    reps: int
    used: int
    skipped: int
    boundary_low_fraction: float
    boundary_high_fraction: float
    bias: dict[str, float | None]
    excluded: dict[str, int]


def _bias(results: Sequence[IllustrateReplicate], true_beta1: float) -> tuple[dict, dict]:
    bias: dict[str, float | None] = {}
    excluded: dict[str, int] = {}
    for method in DEVIATION_METHODS:
        kept = [
            item.beta1[method] - true_beta1
            for item in results
            if item.converged[method] and np.isfinite(item.beta1[method])
        ]
        excluded[method] = len(results) - len(kept)
        bias[method] = float(np.mean(kept)) if kept else None
    return bias, excluded


def run_illustrate(
    out: Path,
    *,
    seed: int = DEFAULT_MASTER_SEED,
    reps: int = ILLUSTRATE_REPS,
    n: int = 100,
    workers: int = DEFAULT_WORKERS,
    settings: FitSettings | None = None,
) -> IllustrateReport:
    settings = settings or FitSettings()
    write_csv(pa.Table.from_pylist(fixed_dataset_rows(settings)), out / "fixed_datasets.csv")
    profiles, components = loocv_profile_rows(settings)
    write_csv(pa.Table.from_pylist(profiles), out / "loocv_profiles.csv")
    write_csv(pa.Table.from_pylist(components), out / "loocv_components.csv")

    tasks = [IllustrateTask(seed, replicate, n, settings) for replicate in range(reps)]
    results: list[IllustrateReplicate] = []
    for done, result in enumerate(_map(tasks, workers), start=1):
        if result is not None:
            results.append(result)
        if done % PROGRESS_EVERY == 0 or done == reps:
            print(
                json.dumps(
                    {
                        "event": "illustrate_progress",
                        "done": done,
                        "reps": reps,
                        "used": len(results),
                    },
                    sort_keys=True,
                ),
                flush=True,
            )

    grid = settings.grid.values
    selected = np.array([item.lambda_star for item in results])
    counts = [int(np.sum(np.isclose(selected, lam, rtol=1e-12, atol=0.0))) for lam in grid]
    write_csv(
        pa.Table.from_pylist(
            [{"lambda": float(lam), "count": count} for lam, count in zip(grid, counts)]
        ),
        out / "lambda_histogram.csv",
    )
    true_beta1 = ILLUSTRATIVE_EFFECT
    deviations = [
        {
            "replicate": item.replicate,
            "method": method,
            "beta1": item.beta1[method] if np.isfinite(item.beta1[method]) else None,
            "deviation": item.beta1[method] - true_beta1
            if np.isfinite(item.beta1[method])
            else None,
            "converged": item.converged[method],
            "separated": item.separated,
        }
        for item in results
        for method in DEVIATION_METHODS
    ]
    write_csv(pa.Table.from_pylist(deviations), out / "coefficient_deviations.csv")

    used = len(results)
    bias, excluded = _bias(results, true_beta1)
    report = IllustrateReport(
        out=str(out),
        reps=reps,
        used=used,
        skipped=reps - used,
        boundary_low_fraction=sum(item.boundary_low for item in results) / used if used else 0.0,
        boundary_high_fraction=sum(item.boundary_high for item in results) / used if used else 0.0,
        bias=bias,
        excluded=excluded,
    )
    write_json(
        {"schema_version": SCHEMA_VERSION, "seed": seed, "n": n, **asdict(report)},
        out / "summary.json",
    )
    return report
