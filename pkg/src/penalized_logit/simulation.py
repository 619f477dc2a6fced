"""Scenario orchestration: run configuration, replicate fitting, and resumable persistence."""

from __future__ import annotations

import json
from collections.abc import Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import (
    CALIBRATION_DRAWS,
    CALIBRATION_SEED,
    CALIBRATION_VERSION,
    DEFAULT_GCV_MODE,
    DEFAULT_MASTER_SEED,
    DEFAULT_REPS,
    DEFAULT_WORKERS,
    GCV_MODES,
    GRID_HIGH_EXPONENT,
    GRID_LOW_EXPONENT,
    GRID_SIZE,
    GRID_VERSION,
    LOCAL_OUTPUT_DIR,
    RCV_REPETITIONS,
    RESCALE_S,
    SCHEMA_VERSION,
)
from .estimators import (
    METHODS,
    REFERENCE_METHOD,
    FitSettings,
    MethodFit,
    MethodWorkspace,
    check_methods,
)
from .glm import expit
from .metrics import SingleClassError, c_index, calibration_slope
from .models import (
    CONSTANT_COLUMN,
    DEGENERATE_SLOPE,
    NONCONVERGENCE,
    SEPARATION_CHECK_FAILED,
    SINGLE_CLASS_VALIDATION,
    TUNING_FAILED,
    ReplicateRecord,
    derive_seed,
)
from .penalty import ConstantColumnError
from .separation import SeparationCheckError, detect_separation
from .simgen import (
    PRINTED_BETA10,
    Calibration,
    GeneratedDataset,
    ScenarioConfig,
    all_scenarios,
    calibrate,
    default_correlation,
    generate_dataset,
    generate_validation,
)
from .storage import (
    RecordStore,
    ResumeConflictError,
    load_calibration,
    read_json,
    save_calibration,
    write_json,
)
from .tuning import LambdaGrid, TuningError

DEFAULT_METHODS = (*METHODS, REFERENCE_METHOD)
CONFIG_KEYS = frozenset(
    {
        "scenarios",
        "all_scenarios",
        "reps",
        "master_seed",
        "methods",
        "gcv_mode",
        "out",
        "workers",
        "resume",
        "calibration_draws",
        "grid",
        "printed_beta10",
    }
)
GRID_KEYS = frozenset({"low", "high", "size"})


class ConfigError(ValueError):
    """Raised for malformed or unknown run-configuration entries."""


@dataclass(frozen=True)
class GridSpec:
    low: float = GRID_LOW_EXPONENT
    high: float = GRID_HIGH_EXPONENT
    size: int = GRID_SIZE

    @property
    def version(self) -> str:
        if (self.low, self.high, self.size) == (GRID_LOW_EXPONENT, GRID_HIGH_EXPONENT, GRID_SIZE):
            return GRID_VERSION
        return f"log10[{self.low:g},{self.high:g}]x{self.size}-v1"

    def build(self) -> LambdaGrid:
        return LambdaGrid.log_spaced(self.low, self.high, self.size)


@dataclass(frozen=True)
class RunConfig:
    scenarios: tuple[ScenarioConfig, ...]
    reps: int = DEFAULT_REPS
    master_seed: int = DEFAULT_MASTER_SEED
    methods: tuple[str, ...] = DEFAULT_METHODS
    gcv_mode: str = DEFAULT_GCV_MODE
    out: Path = LOCAL_OUTPUT_DIR
    workers: int = DEFAULT_WORKERS
    resume: bool = False
    calibration_draws: int = CALIBRATION_DRAWS
    grid: GridSpec = field(default_factory=GridSpec)
    printed_beta10: bool = False
    rcv_reps: int = RCV_REPETITIONS

    def __post_init__(self) -> None:
        if not self.scenarios:
            raise ConfigError("At least one scenario is required")
        if not self.methods:
            raise ConfigError("At least one method is required")
        try:
            check_methods(self.methods, allow_reference=True)
        except ValueError as error:
            raise ConfigError(str(error)) from error
        if self.gcv_mode not in GCV_MODES:
            raise ConfigError(f"GCV mode must be one of {GCV_MODES}; got {self.gcv_mode!r}")
        if self.reps < 1 or self.workers < 1 or self.calibration_draws < 1000:
            raise ConfigError("reps and workers must be positive; calibration needs >= 1000 draws")

    @property
    def settings(self) -> FitSettings:
        return FitSettings(
            grid=self.grid.build(),
            gcv_mode=self.gcv_mode,
            rescale_s=RESCALE_S,
            rcv_reps=self.rcv_reps,
        )

    def scenario_plan(self) -> tuple[ScenarioConfig, ...]:
        return tuple(
            ScenarioConfig(
                scenario.n,
                scenario.k,
                scenario.a,
                scenario.ey_target,
                scenario.noise,
                reps=self.reps,
                master_seed=self.master_seed,
            )
            for scenario in self.scenarios
        )


def _scenario_from_json(value: object) -> ScenarioConfig:
    if isinstance(value, str):
        return ScenarioConfig.parse(value)
    if isinstance(value, dict):
        unknown = set(value) - {"n", "k", "a", "ey_target", "noise"}
        if unknown:
            raise ConfigError(f"Unknown scenario keys {sorted(unknown)}")
        return ScenarioConfig(
            n=int(value["n"]),
            k=int(value["k"]),
            a=float(value["a"]),
            ey_target=float(value["ey_target"]),
            noise=bool(value["noise"]),
        )
    raise ConfigError(f"Scenario entries must be strings or objects; got {value!r}")


def load_run_config(path: Path, **overrides: object) -> RunConfig:
    """Read a JSON run configuration; keyword overrides win over file values."""

    payload = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(payload, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    unknown = set(payload) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"Unknown configuration keys {sorted(unknown)}")
    grid_payload = payload.get("grid", {})
    if set(grid_payload) - GRID_KEYS:
        raise ConfigError(f"Unknown grid keys {sorted(set(grid_payload) - GRID_KEYS)}")
    try:
        if payload.get("all_scenarios"):
            scenarios = all_scenarios()
        else:
            scenarios = tuple(_scenario_from_json(item) for item in payload.get("scenarios", []))
    except (KeyError, TypeError, ValueError) as error:
        raise ConfigError(f"Invalid scenario in {path}: {error}") from error
    values: dict[str, object] = {
        "scenarios": scenarios,
        "reps": int(payload.get("reps", DEFAULT_REPS)),
        "master_seed": int(payload.get("master_seed", DEFAULT_MASTER_SEED)),
        "methods": tuple(payload.get("methods", DEFAULT_METHODS)),
        "gcv_mode": str(payload.get("gcv_mode", DEFAULT_GCV_MODE)),
        "out": Path(payload.get("out", LOCAL_OUTPUT_DIR)),
        "workers": int(payload.get("workers", DEFAULT_WORKERS)),
        "resume": bool(payload.get("resume", False)),
        "calibration_draws": int(payload.get("calibration_draws", CALIBRATION_DRAWS)),
        "grid": GridSpec(
            low=float(grid_payload.get("low", GRID_LOW_EXPONENT)),
            high=float(grid_payload.get("high", GRID_HIGH_EXPONENT)),
            size=int(grid_payload.get("size", GRID_SIZE)),
        ),
        "printed_beta10": bool(payload.get("printed_beta10", False)),
    }
    values.update({key: value for key, value in overrides.items() if value is not None})
    return RunConfig(**values)


def ensure_calibration(
    directory: Path,
    scenarios: Sequence[ScenarioConfig],
    *,
    draws: int = CALIBRATION_DRAWS,
    printed_beta10: bool = False,
) -> Calibration:
    """Load the cached calibration, extending it with intercepts for new scenario cells."""

    correlation = default_correlation()
    existing = load_calibration(directory)
    if existing is not None and (
        (existing.seed, existing.draws, existing.correlation_hash)
        != (CALIBRATION_SEED, draws, correlation.report_hash)
        or (existing.betas[9] == PRINTED_BETA10) != printed_beta10
    ):
        existing = None
    if existing is not None and existing.covers(scenarios):
        calibration = existing
    else:
        calibration = calibrate(
            scenarios,
            correlation=correlation,
            draws=draws,
            seed=CALIBRATION_SEED,
            printed_beta10=printed_beta10,
            existing=existing,
        )
        save_calibration(calibration, directory)
    print(
        json.dumps(
            {
                "event": "calibration_ready",
                "seed": calibration.seed,
                "draws": calibration.draws,
                "intercepts": len(calibration.intercepts),
                "correlation_hash": calibration.correlation_hash,
                "reused": calibration is existing,
            },
            sort_keys=True,
        ),
        flush=True,
    )
    return calibration


@dataclass(frozen=True)
class ReplicateTask:
    scenario: ScenarioConfig
    replicate: int
    calibration: Calibration
    settings: FitSettings
    methods: tuple[str, ...]


def _method_fits(
    task: ReplicateTask,
    generated: GeneratedDataset,
    rng: np.random.Generator,
    separated: bool,
) -> tuple[dict[str, MethodFit], set[str]]:
    fitted = [method for method in task.methods if method != REFERENCE_METHOD]
    try:
        workspace = MethodWorkspace(
            generated.data,
            task.settings,
            rng=rng,
            beta1_true=float(generated.beta_true[0]),
            pi_true=generated.pi_true,
            separated=separated,
        )
    except ConstantColumnError:
        return {}, {CONSTANT_COLUMN}
    fits: dict[str, MethodFit] = {}
    for method in fitted:
        try:
            fits[method] = workspace.fit(method)
        except TuningError:
            fits[method] = MethodFit(
                method=method,
                beta=np.full(generated.data.p, np.nan),
                converged=False,
                flags=frozenset({TUNING_FAILED, NONCONVERGENCE}),
            )
    return fits, set()


def _evaluate(
    beta: np.ndarray,
    generated: GeneratedDataset,
    validation: GeneratedDataset,
) -> tuple[float | None, float | None, float | None, set[str]]:
    flags: set[str] = set()
    if not np.all(np.isfinite(beta)):
        return None, None, None, flags
    slope = calibration_slope(validation.data, beta)
    if slope.degenerate:
        flags.add(DEGENERATE_SLOPE)
    if not slope.converged:
        flags.add(NONCONVERGENCE)
    try:
        cindex = c_index(expit(validation.data.X @ beta), validation.data.y)
    except SingleClassError:
        cindex = None
        flags.add(SINGLE_CLASS_VALIDATION)
    contribution = float(np.mean((expit(generated.data.X @ beta) - generated.pi_true) ** 2))
    return slope.slope, cindex, contribution, flags


def run_replicate(task: ReplicateTask) -> list[ReplicateRecord]:
    """Generate one training/validation pair, fit every method, and score each fit."""

    scenario = task.scenario
    seed_parts = (scenario.master_seed, scenario.scenario_id, task.replicate)
    generated = generate_dataset(scenario, task.replicate, task.calibration)
    validation = generate_validation(
        scenario,
        np.random.default_rng(derive_seed(*seed_parts, "validation")),
        task.calibration,
    )
    shared: set[str] = set()
    try:
        separated = detect_separation(generated.data).separated
    except SeparationCheckError:
        separated = False
        shared.add(SEPARATION_CHECK_FAILED)
    fits, workspace_flags = _method_fits(
        task, generated, np.random.default_rng(derive_seed(*seed_parts, "rcv")), separated
    )
    shared |= workspace_flags
    records = []
    for method in task.methods:
        if method == REFERENCE_METHOD:
            fit = MethodFit(method=method, beta=generated.coefficients, converged=True)
        elif method in fits:
            fit = fits[method]
        else:
            fit = MethodFit(
                method=method,
                beta=np.full(generated.data.p, np.nan),
                converged=False,
                flags=frozenset({NONCONVERGENCE}),
            )
        slope, cindex, contribution, evaluation_flags = _evaluate(fit.beta, generated, validation)
        records.append(
            ReplicateRecord(
                scenario_id=scenario.scenario_id,
                replicate=task.replicate,
                method=method,
                lambda_star=fit.lambda_star,
                boundary_hit=fit.boundary_hit,
                separated=separated,
                converged=fit.converged,
                beta=tuple(float(value) for value in fit.beta),
                slope=slope,
                cindex=cindex,
                rmse_pred_contrib=contribution,
                flags=tuple(sorted(set(fit.flags) | shared | evaluation_flags)),
            )
        )
    return records


def _map(tasks: Sequence[ReplicateTask], workers: int) -> Iterator[list[ReplicateRecord]]:
    if workers <= 1:
        yield from map(run_replicate, tasks)
        return
    with ProcessPoolExecutor(max_workers=workers) as executor:
        yield from executor.map(run_replicate, tasks)


def scenario_manifest(
    config: RunConfig, scenario: ScenarioConfig, calibration: Calibration
) -> dict[str, object]:
    columns = list(scenario.columns)
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario_id": scenario.scenario_id,
        "scenario": {
            "n": scenario.n,
            "k": scenario.k,
            "a": scenario.a,
            "ey_target": scenario.ey_target,
            "noise": scenario.noise,
        },
        "reps": scenario.reps,
        "master_seed": scenario.master_seed,
        "methods": list(config.methods),
        "covariates": [f"x{index + 1}" for index in columns],
        "beta0": calibration.intercept(scenario),
        "beta_true": [scenario.a * float(calibration.betas[index]) for index in columns],
        "grid_version": config.grid.version,
        "gcv_mode": config.gcv_mode,
        "rescale_s": RESCALE_S,
        "rcv_reps": config.rcv_reps,
        "calibration": {
            "seed": calibration.seed,
            "draws": calibration.draws,
            "version": CALIBRATION_VERSION,
            "printed_beta10": config.printed_beta10,
        },
        "correlation_hash": calibration.correlation_hash,
    }


def _check_manifest(path: Path, manifest: dict[str, object]) -> None:
    if not path.exists():
        return
    previous = read_json(path)
    fields = ("methods", "master_seed", "grid_version", "gcv_mode", "beta_true", "beta0")
    changed = [key for key in fields if previous.get(key) != manifest.get(key)]
    if changed:
        raise ResumeConflictError(f"Cannot resume {path.stem}: settings changed for {changed}")


@dataclass(frozen=True)
class SimulationReport:
    out: str
    scenarios: int
    replicates_run: int
    replicates_skipped: int
    records_written: int


def run_simulation(config: RunConfig) -> SimulationReport:
    scenarios = config.scenario_plan()
    calibration = ensure_calibration(
        config.out / "calibration",
        scenarios,
        draws=config.calibration_draws,
        printed_beta10=config.printed_beta10,
    )
    write_json(
        {
            "schema_version": SCHEMA_VERSION,
            "master_seed": config.master_seed,
            "reps": config.reps,
            "methods": list(config.methods),
            "gcv_mode": config.gcv_mode,
            "grid_version": config.grid.version,
            "scenarios": [scenario.scenario_id for scenario in scenarios],
            "correlation": default_correlation().report(),
        },
        config.out / "run.json",
    )
    settings = config.settings
    replicates_run = replicates_skipped = records_written = 0
    for scenario in scenarios:
        manifest = scenario_manifest(config, scenario, calibration)
        manifest_path = config.out / "manifests" / f"{scenario.scenario_id}.json"
        store = RecordStore(
            config.out / "records" / f"{scenario.scenario_id}.csv", len(scenario.columns) + 1
        )
        store.prepare(resume=config.resume)
        if config.resume:
            _check_manifest(manifest_path, manifest)
        write_json(manifest, manifest_path)
        done = store.completed_replicates(config.methods) if config.resume else set()
        pending = [replicate for replicate in range(scenario.reps) if replicate not in done]
        print(
            json.dumps(
                {
                    "event": "scenario_start",
                    "scenario_id": scenario.scenario_id,
                    "pending": len(pending),
                    "skipped": len(done),
                    "workers": config.workers,
                },
                sort_keys=True,
            ),
            flush=True,
        )
        tasks = [
            ReplicateTask(scenario, replicate, calibration, settings, config.methods)
            for replicate in pending
        ]
        separated = 0
        for records in _map(tasks, config.workers):
            records_written += store.append(records)
            replicates_run += 1
            separated += int(records[0].separated)
            print(
                json.dumps(
                    {
                        "event": "replicate_done",
                        "scenario_id": scenario.scenario_id,
                        "replicate": records[0].replicate,
                        "separated": records[0].separated,
                        "nonconverged": sorted(
                            record.method for record in records if not record.converged
                        ),
                    },
                    sort_keys=True,
                ),
                flush=True,
            )
        replicates_skipped += len(done)
        print(
            json.dumps(
                {
                    "event": "scenario_done",
                    "scenario_id": scenario.scenario_id,
                    "replicates": len(pending),
                    "separated": separated,
                },
                sort_keys=True,
            ),
            flush=True,
        )
    return SimulationReport(
        out=str(config.out),
        scenarios=len(scenarios),
        replicates_run=replicates_run,
        replicates_skipped=replicates_skipped,
        records_written=records_written,
    )