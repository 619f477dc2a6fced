"""Aggregate replicate records into per-scenario method comparison tables."""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import duckdb
import numpy as np
import pyarrow as pa
import pyarrow.compute as pc

from .config import SCHEMA_VERSION
from .estimators import METHODS, ORACLE_METHODS, REFERENCE_METHOD, TUNED_METHODS
from .metrics import (
    count_nonfinite,
    mad,
    rmse_coef,
    rmse_pred_from_contributions,
    rmsd_log_slope,
    spearman,
    winsorize_slopes,
)
from .storage import RecordStore, read_json, write_csv

METHOD_ORDER = (*METHODS, REFERENCE_METHOD)
SCENARIO_COLUMNS = ("scenario_id", "n", "k", "a", "ey_target", "noise")

SUMMARY_SCHEMA = pa.schema(
    [
        pa.field("scenario_id", pa.string(), nullable=False),
        pa.field("n", pa.int32(), nullable=False),
        pa.field("k", pa.int32(), nullable=False),
        pa.field("a", pa.float64(), nullable=False),
        pa.field("ey_target", pa.float64(), nullable=False),
        pa.field("noise", pa.bool_(), nullable=False),
        pa.field("method", pa.string(), nullable=False),
        pa.field("reps", pa.int64(), nullable=False),
        pa.field("sp_percent", pa.float64()),
        pa.field("converged_percent", pa.float64()),
        pa.field("rmse_beta1", pa.float64()),
        pa.field("rmse_beta1_all", pa.float64()),
        pa.field("excluded_beta1_percent", pa.float64()),
        pa.field("rmse_beta2", pa.float64()),
        pa.field("rmse_beta2_all", pa.float64()),
        pa.field("excluded_beta2_percent", pa.float64()),
        pa.field("rmse_pred_x1e4", pa.float64()),
        pa.field("slope_median", pa.float64()),
        pa.field("slope_p05", pa.float64()),
        pa.field("slope_p95", pa.float64()),
        pa.field("rmsd_log_slope", pa.float64()),
        pa.field("cindex_mean_x1000", pa.float64()),
        pa.field("cindex_sd_x1000", pa.float64()),
        pa.field("lambda_mad", pa.float64()),
        pa.field("boundary_percent", pa.float64()),
        pa.field("spearman_log_slope_lambda", pa.float64()),
    ],
    metadata={b"schema_version": str(SCHEMA_VERSION).encode()},
)

WIDE_METRICS = (
    "sp_percent",
    "rmse_beta1",
    "rmse_beta2",
    "rmse_pred_x1e4",
    "slope_median",
    "rmsd_log_slope",
    "cindex_mean_x1000",
    "lambda_mad",
    "boundary_percent",
)


class EmptyStoreError(RuntimeError):
    """Raised when a report is requested for a store without records."""


@dataclass(frozen=True)
class ReportSummary:
    out: str
    scenarios: int
    methods: tuple[str, ...]
    rows: int
    files: tuple[str, ...]


def _finite_or_none(value: float | None) -> float | None:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def load_records(in_dir: Path) -> tuple[pa.Table, dict[str, dict[str, object]]]:
    """Read every scenario record file with its manifest-declared schema."""

    manifests = {
        path.stem: read_json(path) for path in sorted((in_dir / "manifests").glob("*.json"))
    }
    tables = []
    for scenario_id, manifest in manifests.items():
        store = RecordStore(
            in_dir / "records" / f"{scenario_id}.csv", len(manifest["covariates"]) + 1
        )
        if store.exists():
            tables.append(store.read())
    if not tables:
        raise EmptyStoreError(f"No replicate records found under {in_dir}")
    table = pa.concat_tables(tables, promote_options="default")
    if table.num_rows == 0:
        raise EmptyStoreError(f"Replicate record files under {in_dir} are empty")
    return table, manifests


def _coefficient_errors(
    estimates: list[float | None], converged: list[bool], truth: float
) -> tuple[float | None, float | None, float]:
    values = np.array([np.nan if value is None else value for value in estimates], dtype=float)
    kept = values[np.array(converged, dtype=bool)]
    excluded = (count_nonfinite(kept) + (values.size - kept.size)) / values.size * 100.0
    finite_kept = kept[np.isfinite(kept)]
    converged_rmse = rmse_coef(finite_kept, truth) if finite_kept.size else None
    all_rmse = rmse_coef(values, truth) if np.isfinite(values).any() else None
    return converged_rmse, all_rmse, excluded


def _metric_row(group: dict[str, object], manifest: dict[str, object]) -> dict[str, object]:
    scenario = manifest["scenario"]
    truth = manifest["beta_true"]
    converged = group["converged"]
    row: dict[str, object] = {
        "scenario_id": group["scenario_id"],
        "n": scenario["n"],
        "k": scenario["k"],
        "a": scenario["a"],
        "ey_target": scenario["ey_target"],
        "noise": scenario["noise"],
        "method": group["method"],
        "reps": group["reps"],
        "sp_percent": group["sp_percent"],
        "converged_percent": group["converged_percent"],
        "boundary_percent": group["boundary_percent"],
    }
    for index in (1, 2):
        key = f"beta{index}"
        if index <= len(truth) and group[key] is not None:
            rmse, rmse_all, excluded = _coefficient_errors(
                group[key], converged, float(truth[index - 1])
            )
        else:
            rmse = rmse_all = excluded = None
        row[f"rmse_{key}"] = rmse
        row[f"rmse_{key}_all"] = rmse_all
        row[f"excluded_{key}_percent"] = excluded

    contributions = np.array(
        [np.nan if value is None else value for value in group["rmse_pred_contrib"]], dtype=float
    )
    row["rmse_pred_x1e4"] = (
        rmse_pred_from_contributions(contributions) * 1e4
        if np.isfinite(contributions).any()
        else None
    )

    slopes = np.array([np.nan if value is None else value for value in group["slope"]], dtype=float)
    finite_slopes = slopes[np.isfinite(slopes)]
    if finite_slopes.size:
        p05, median, p95 = np.percentile(finite_slopes, [5, 50, 95])
        row.update(
            slope_median=float(median),
            slope_p05=float(p05),
            slope_p95=float(p95),
            rmsd_log_slope=rmsd_log_slope(finite_slopes),
        )
    else:
        row.update(slope_median=None, slope_p05=None, slope_p95=None, rmsd_log_slope=None)

    cindex = np.array([value for value in group["cindex"] if value is not None], dtype=float)
    row["cindex_mean_x1000"] = float(cindex.mean() * 1000) if cindex.size else None
    row["cindex_sd_x1000"] = float(cindex.std(ddof=1) * 1000) if cindex.size > 1 else None

    lambdas = np.array(
        [np.nan if value is None else value for value in group["lambda_star"]], dtype=float
    )
    finite_lambdas = lambdas[np.isfinite(lambdas)]
    row["lambda_mad"] = mad(finite_lambdas) if finite_lambdas.size else None
    paired = np.isfinite(lambdas) & np.isfinite(slopes)
    row["spearman_log_slope_lambda"] = (
        _finite_or_none(
            spearman(np.log(winsorize_slopes(slopes[paired])), lambdas[paired])
        )
        if group["method"] in TUNED_METHODS and paired.sum() >= 3
        else None
    )
    return {
        field.name: _finite_or_none(value) if isinstance(value, float) else value
        for field in SUMMARY_SCHEMA
        for value in [row[field.name]]
    }


def _method_rank(method: str) -> int:
    return METHOD_ORDER.index(method) if method in METHOD_ORDER else len(METHOD_ORDER)


def summarize(
    table: pa.Table,
    manifests: dict[str, dict[str, object]],
    methods: Sequence[str] | None = None,
) -> list[dict[str, object]]:
    """One row per scenario and method with prevalence, error, calibration, and λ* columns."""

    if methods is not None and not methods:
        raise ValueError("Method filter is empty")
    if methods is not None:
        table = table.filter(pc.is_in(table["method"], value_set=pa.array(list(methods))))
    con = duckdb.connect()
    con.register("records", table)
    beta2 = (
        "list(r.beta2 ORDER BY r.replicate)" if "beta2" in table.column_names else "NULL"
    )
    groups = (
        con.execute(
            f"""
            WITH prevalence AS (
                SELECT scenario_id, 100 * avg(CAST(separated AS DOUBLE)) AS sp_percent
                FROM (SELECT DISTINCT scenario_id, replicate, separated FROM records)
                GROUP BY scenario_id
            )
            SELECT
                r.scenario_id,
                r.method,
                count(*) AS reps,
                any_value(p.sp_percent) AS sp_percent,
                100 * avg(CAST(r.converged AS DOUBLE)) AS converged_percent,
                100 * avg(CAST(r.boundary_hit AS DOUBLE)) AS boundary_percent,
                list(r.converged ORDER BY r.replicate) AS converged,
                list(r.beta1 ORDER BY r.replicate) AS beta1,
                {beta2} AS beta2,
                list(r.slope ORDER BY r.replicate) AS slope,
                list(r.cindex ORDER BY r.replicate) AS cindex,
                list(r.lambda_star ORDER BY r.replicate) AS lambda_star,
                list(r.rmse_pred_contrib ORDER BY r.replicate) AS rmse_pred_contrib
            FROM records r
            JOIN prevalence p USING (scenario_id)
            GROUP BY r.scenario_id, r.method
            """
        )
        .to_arrow_table()
        .to_pylist()
    )
    if not groups:
        raise EmptyStoreError("No records match the requested methods")
    rows = [_metric_row(group, manifests[group["scenario_id"]]) for group in groups]
    return sorted(rows, key=lambda row: (row["scenario_id"], _method_rank(row["method"])))


def lambda_scatter(table: pa.Table) -> pa.Table:
    """Per-replicate λ* of every tuned method next to the two oracle λ* values."""

    con = duckdb.connect()
    con.register("records", table)
    tuned = sorted(TUNED_METHODS - ORACLE_METHODS)
    return con.execute(
        """
        SELECT
            t.scenario_id,
            t.replicate,
            t.method,
            t.lambda_star,
            oex.lambda_star AS lambda_oex,
            op.lambda_star AS lambda_op,
            t.slope
        FROM records t
        LEFT JOIN records oex
            ON oex.scenario_id = t.scenario_id
            AND oex.replicate = t.replicate
            AND oex.method = 'OEX'
        LEFT JOIN records op
            ON op.scenario_id = t.scenario_id
            AND op.replicate = t.replicate
            AND op.method = 'OP'
        WHERE list_contains(?, t.method)
        ORDER BY t.scenario_id, t.replicate, t.method
        """,
        [tuned],
    ).to_arrow_table()


def wide_table(rows: Sequence[dict[str, object]], metric: str) -> pa.Table:
    """Scenarios as rows, methods as columns, for a single summary metric."""

    methods = sorted({row["method"] for row in rows}, key=_method_rank)
    by_scenario: dict[str, dict[str, object]] = {}
    for row in rows:
        entry = by_scenario.setdefault(
            row["scenario_id"],
            {key: row[key] for key in SCENARIO_COLUMNS},
        )
        entry[row["method"]] = row[metric]
    schema = pa.schema(
        [
            *(SUMMARY_SCHEMA.field(key) for key in SCENARIO_COLUMNS),
            *(pa.field(method, pa.float64()) for method in methods),
        ],
        metadata={b"schema_version": str(SCHEMA_VERSION).encode(), b"metric": metric.encode()},
    )
    return pa.Table.from_pylist(
        [by_scenario[scenario_id] for scenario_id in sorted(by_scenario)], schema=schema
    )


def write_report(
    in_dir: Path, out_dir: Path, methods: Sequence[str] | None = None
) -> ReportSummary:
    table, manifests = load_records(in_dir)
    rows = summarize(table, manifests, methods)
    files = [write_csv(pa.Table.from_pylist(rows, schema=SUMMARY_SCHEMA), out_dir / "summary.csv")]
    for metric in WIDE_METRICS:
        files.append(write_csv(wide_table(rows, metric), out_dir / "tables" / f"{metric}.csv"))
    files.append(write_csv(lambda_scatter(table), out_dir / "lambda_scatter.csv"))
    summary = ReportSummary(
        out=str(out_dir),
        scenarios=len({row["scenario_id"] for row in rows}),
        methods=tuple(sorted({row["method"] for row in rows}, key=_method_rank)),
        rows=len(rows),
        files=tuple(str(path) for path in files),
    )
    print(
        json.dumps(
            {"event": "report_written", "out": summary.out, "rows": summary.rows},
            sort_keys=True,
        ),
        flush=True,
    )
    return summary
