"""Command-line interface for illustration, simulation, reporting, and single-dataset fits."""

from __future__ import annotations

import argparse
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pyarrow as pa
import pyarrow.csv as pacsv

from .config import (
    CALIBRATION_DRAWS,
    DEFAULT_GCV_MODE,
    DEFAULT_MASTER_SEED,
    DEFAULT_REPS,
    DEFAULT_WORKERS,
    FULL_REPS,
    GCV_MODES,
    ILLUSTRATE_REPS,
    LOCAL_OUTPUT_DIR,
)
from .estimators import (
    FIXED_RIDGE,
    METHODS,
    ORACLE_METHODS,
    FitSettings,
    MethodFit,
    MethodWorkspace,
    UnknownMethodError,
)
from .glm import expit
from .illustrate import run_illustrate
from .models import Dataset, DimensionMismatchError, InvalidDatasetError, derive_seed
from .penalty import ConstantColumnError, PriorSpec, prior_to_lambda
from .report import EmptyStoreError, write_report
from .separation import SeparationCheckError, detect_separation
from .simgen import CalibrationError, ScenarioConfig, all_scenarios
from .simulation import (
    DEFAULT_METHODS,
    ConfigError,
    RunConfig,
    load_run_config,
    run_simulation,
)
from .storage import ResumeConflictError, write_json
from .tuning import TuningError

FIT_METHODS = (*(method for method in METHODS if method not in ORACLE_METHODS), FIXED_RIDGE)
DEFAULT_FIT_METHOD = "FC"


def _methods(value: str | None) -> tuple[str, ...] | None:
    if value is None:
        return None
    return tuple(item.strip() for item in value.split(",") if item.strip())


def _jsonable(value: float | None) -> float | None:
    return None if value is None or not math.isfinite(value) else float(value)


def command_illustrate(args: argparse.Namespace) -> None:
    report = run_illustrate(Path(args.out), seed=args.seed, reps=args.reps, workers=args.workers)
    print(json.dumps(asdict(report), sort_keys=True))


def _run_config(args: argparse.Namespace) -> RunConfig:
    reps = FULL_REPS if args.full else args.reps
    overrides = {
        "reps": reps,
        "master_seed": args.seed,
        "methods": _methods(args.methods),
        "gcv_mode": args.gcv_mode,
        "out": Path(args.out) if args.out else None,
        "workers": args.workers,
        "resume": True if args.resume else None,
        "calibration_draws": args.calibration_draws,
        "printed_beta10": True if args.printed_beta10 else None,
    }
    if args.config:
        return load_run_config(Path(args.config), **overrides)
    if args.all_scenarios:
        scenarios = all_scenarios()
    elif args.scenario:
        scenarios = tuple(ScenarioConfig.parse(text) for text in args.scenario)
    else:
        raise SystemExit("Pass --config, --scenario N,K,a,ey,noise, or --all-scenarios")
    return RunConfig(
        scenarios=scenarios,
        reps=reps or DEFAULT_REPS,
        master_seed=DEFAULT_MASTER_SEED if args.seed is None else args.seed,
        methods=_methods(args.methods) or DEFAULT_METHODS,
        gcv_mode=args.gcv_mode or DEFAULT_GCV_MODE,
        out=Path(args.out) if args.out else LOCAL_OUTPUT_DIR,
        workers=args.workers or DEFAULT_WORKERS,
        resume=args.resume,
        calibration_draws=args.calibration_draws or CALIBRATION_DRAWS,
        printed_beta10=args.printed_beta10,
    )


def command_simulate(args: argparse.Namespace) -> None:
    try:
        report = run_simulation(_run_config(args))
    except (ConfigError, ResumeConflictError, CalibrationError, ValueError) as error:
        raise SystemExit(str(error)) from error
    print(json.dumps(asdict(report), sort_keys=True))


def command_report(args: argparse.Namespace) -> None:
    try:
        summary = write_report(Path(args.input), Path(args.out), _methods(args.methods))
    except (EmptyStoreError, ValueError) as error:
        raise SystemExit(str(error)) from error
    print(json.dumps(asdict(summary), sort_keys=True))


def read_dataset(path: Path, outcome: str) -> tuple[Dataset, list[str]]:
    """Outcome column plus every other column as a numeric covariate."""

    try:
        table = pacsv.read_csv(path)
    except (OSError, pa.ArrowInvalid) as error:
        raise SystemExit(f"Cannot read {path}: {error}") from error
    if outcome not in table.column_names:
        raise SystemExit(f"{path} has no outcome column {outcome!r}")
    covariates = [name for name in table.column_names if name != outcome]
    if not covariates:
        raise SystemExit(f"{path} has no covariate columns")
    try:
        X = np.column_stack(
            [table.column(name).to_numpy(zero_copy_only=False).astype(float) for name in covariates]
        )
        y = table.column(outcome).to_numpy(zero_copy_only=False).astype(float)
        return Dataset.from_covariates(X, y), covariates
    except (TypeError, ValueError) as error:
        raise SystemExit(f"{path} must hold numeric columns and a 0/1 outcome: {error}") from error


def _fit_payload(
    fit: MethodFit, data: Dataset, covariates: list[str], separated: bool | None
) -> dict[str, object]:
    payload: dict[str, object] = {
        "method": fit.method,
        "coefficients": dict(
            zip(["(Intercept)", *covariates], (_jsonable(value) for value in fit.beta))
        ),
        "mean_probability": _jsonable(float(np.mean(expit(data.X @ fit.beta)))),
        "converged": fit.converged,
        "lambda_star": fit.lambda_star,
        "boundary_hit": fit.boundary_hit,
        "separated": separated,
        "flags": sorted(fit.flags),
    }
    if fit.profile is not None:
        payload["profile"] = {
            "criterion": fit.profile.criterion,
            "lambda": [float(value) for value in fit.profile.grid.values],
            "score": [_jsonable(value) for value in fit.profile.scores],
        }
    return payload


def command_fit(args: argparse.Namespace) -> None:
    data_path = Path(args.data)
    data, covariates = read_dataset(data_path, args.outcome)
    lam = args.lam
    fixed_penalty = lam is not None or args.prior_or is not None
    if fixed_penalty and args.method not in (None, FIXED_RIDGE):
        raise SystemExit(f"--method {args.method} cannot be combined with --lambda or --prior-or")
    if args.prior_or is not None:
        try:
            lam = prior_to_lambda(PriorSpec(or_upper=args.prior_or))
        except ValueError as error:
            raise SystemExit(str(error)) from error
    method = FIXED_RIDGE if fixed_penalty else args.method or DEFAULT_FIT_METHOD
    if method == FIXED_RIDGE and lam is None:
        raise SystemExit("The fixed ridge needs --lambda or --prior-or")
    settings = FitSettings(gcv_mode=args.gcv_mode)
    try:
        separated: bool | None = detect_separation(data).separated
    except SeparationCheckError:
        separated = None
    try:
        workspace = MethodWorkspace(
            data,
            settings,
            rng=np.random.default_rng(derive_seed(args.seed, "fit", "rcv")),
            separated=separated,
        )
        fit = workspace.fit_fixed(lam) if method == FIXED_RIDGE else workspace.fit(method)
    except (ConstantColumnError, TuningError, UnknownMethodError) as error:
        raise SystemExit(str(error)) from error
    payload = _fit_payload(fit, data, covariates, separated)
    if args.prior_or is not None:
        payload["prior_or_upper"] = args.prior_or
    out = Path(args.out) if args.out else data_path.with_suffix(f".{method}.json")
    write_json(payload, out)
    print(
        json.dumps(
            {
                "method": method,
                "coefficients": payload["coefficients"],
                "lambda_star": fit.lambda_star,
                "converged": fit.converged,
                "separated": separated,
                "flags": payload["flags"],
                "output": str(out),
            },
            sort_keys=True,
        )
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="penalized-logit")
    parser.set_defaults(func=lambda _: parser.print_help())
    subcommands = parser.add_subparsers(dest="command")

    illustrate = subcommands.add_parser(
        "illustrate", help="Fit the two binary-exposure datasets and repeat their generator"
    )
    illustrate.add_argument("--seed", type=int, default=DEFAULT_MASTER_SEED)
    illustrate.add_argument("--reps", type=int, default=ILLUSTRATE_REPS)
    illustrate.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    illustrate.add_argument("--out", default=str(LOCAL_OUTPUT_DIR / "illustrate"))
    illustrate.set_defaults(func=command_illustrate)

    simulate = subcommands.add_parser("simulate", help="Run Monte Carlo scenarios")
    simulate.add_argument("--config")
    simulate.add_argument("--scenario", action="append", help="N,K,a,ey,noise; repeatable")
    simulate.add_argument("--all-scenarios", action="store_true")
    simulate.add_argument("--reps", type=int)
    simulate.add_argument("--full", action="store_true", help=f"Run {FULL_REPS} replicates")
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--methods", help=f"Comma list from {','.join(DEFAULT_METHODS)}")
    simulate.add_argument("--gcv-mode", choices=GCV_MODES)
    simulate.add_argument("--workers", type=int)
    simulate.add_argument("--out")
    simulate.add_argument("--resume", action="store_true")
    simulate.add_argument("--calibration-draws", type=int)
    simulate.add_argument("--printed-beta10", action="store_true")
    simulate.set_defaults(func=command_simulate)

    report = subcommands.add_parser("report", help="Aggregate replicate records into tables")
    report.add_argument("--in", dest="input", default=str(LOCAL_OUTPUT_DIR))
    report.add_argument("--out", default=str(LOCAL_OUTPUT_DIR / "report"))
    report.add_argument("--methods")
    report.set_defaults(func=command_report)

    fit = subcommands.add_parser("fit", help="Fit one method to a CSV dataset")
    fit.add_argument("--data", required=True)
    fit.add_argument("--outcome", required=True)
    fit.add_argument("--method", choices=FIT_METHODS, help=f"Default {DEFAULT_FIT_METHOD}")
    penalty = fit.add_mutually_exclusive_group()
    penalty.add_argument("--lambda", dest="lam", type=float)
    penalty.add_argument("--prior-or", dest="prior_or", type=float)
    fit.add_argument("--gcv-mode", choices=GCV_MODES, default=DEFAULT_GCV_MODE)
    fit.add_argument("--seed", type=int, default=DEFAULT_MASTER_SEED)
    fit.add_argument("--out")
    fit.set_defaults(func=command_fit)
    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (InvalidDatasetError, DimensionMismatchError) as error:
        raise SystemExit(str(error)) from error


if __name__ == "__main__":
    main()
