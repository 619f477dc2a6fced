"""Arrow schemas, append-only record files, run manifests, and the calibration cache."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Sequence
from pathlib import Path

import pyarrow as pa
import pyarrow.csv as pacsv
import pyarrow.parquet as pq

from .config import CALIBRATION_VERSION, SCHEMA_VERSION
from .models import ReplicateRecord
from .simgen import Calibration, CovariateCalibration

RECORD_PREFIX_FIELDS = (
    pa.field("scenario_id", pa.string(), nullable=False),
    pa.field("replicate", pa.int32(), nullable=False),
    pa.field("method", pa.string(), nullable=False),
    pa.field("lambda_star", pa.float64()),
    pa.field("boundary_hit", pa.bool_()),
    pa.field("separated", pa.bool_(), nullable=False),
    pa.field("converged", pa.bool_(), nullable=False),
)
RECORD_SUFFIX_FIELDS = (
    pa.field("slope", pa.float64()),
    pa.field("cindex", pa.float64()),
    pa.field("rmse_pred_contrib", pa.float64()),
    pa.field("flags", pa.string(), nullable=False),
)

COVARIATE_CALIBRATION_SCHEMA = pa.schema(
    [
        pa.field("covariate", pa.string(), nullable=False),
        pa.field("q1", pa.float64(), nullable=False),
        pa.field("q3", pa.float64(), nullable=False),
        pa.field("bound", pa.float64(), nullable=False),
        pa.field("spread", pa.float64(), nullable=False),
        pa.field("beta", pa.float64(), nullable=False),
    ],
    metadata={b"schema_version": str(SCHEMA_VERSION).encode()},
)

INTERCEPT_SCHEMA = pa.schema(
    [
        pa.field("intercept_key", pa.string(), nullable=False),
        pa.field("beta0", pa.float64(), nullable=False),
    ],
    metadata={b"schema_version": str(SCHEMA_VERSION).encode()},
)


class ResumeConflictError(RuntimeError):
    """Raised when a record file already exists and resuming was not requested."""


def coefficient_columns(n_coefficients: int) -> list[str]:
    return [f"beta{index}" for index in range(n_coefficients)]


def record_schema(n_coefficients: int) -> pa.Schema:
    return pa.schema(
        [
            *RECORD_PREFIX_FIELDS,
            *(pa.field(name, pa.float64()) for name in coefficient_columns(n_coefficients)),
            *RECORD_SUFFIX_FIELDS,
        ],
        metadata={b"schema_version": str(SCHEMA_VERSION).encode()},
    )


def _finite_or_none(value: float | None) -> float | None:
    return None if value is None or not math.isfinite(value) else float(value)


def records_table(records: Iterable[ReplicateRecord], n_coefficients: int) -> pa.Table:
    rows = []
    for record in records:
        if len(record.beta) != n_coefficients:
            raise ValueError(
                f"Record for {record.method} has {len(record.beta)} coefficients, "
                f"expected {n_coefficients}"
            )
        row: dict[str, object] = {
            "scenario_id": record.scenario_id,
            "replicate": record.replicate,
            "method": record.method,
            "lambda_star": _finite_or_none(record.lambda_star),
            "boundary_hit": record.boundary_hit,
            "separated": record.separated,
            "converged": record.converged,
        }
        row.update(
            zip(coefficient_columns(n_coefficients), map(_finite_or_none, record.beta))
        )
        row.update(
            {
                "slope": _finite_or_none(record.slope),
                "cindex": _finite_or_none(record.cindex),
                "rmse_pred_contrib": _finite_or_none(record.rmse_pred_contrib),
                "flags": ";".join(sorted(record.flags)),
            }
        )
        rows.append(row)
    return pa.Table.from_pylist(rows, schema=record_schema(n_coefficients))


class RecordStore:
    """Append-only CSV of replicate records for one scenario; one writer per file."""

    def __init__(self, path: Path, n_coefficients: int) -> None:
        self.path = path
        self.n_coefficients = n_coefficients
        self.schema = record_schema(n_coefficients)

    def exists(self) -> bool:
        return self.path.exists() and self.path.stat().st_size > 0

    def read(self) -> pa.Table:
        return pacsv.read_csv(
            self.path,
            convert_options=pacsv.ConvertOptions(
                column_types=self.schema, strings_can_be_null=False
            ),
        )

    def completed_replicates(self, methods: Sequence[str]) -> set[int]:
        """Replicates holding one row per method; a partially written tail is dropped."""

        if not self.exists():
            return set()
        table = self.read()
        seen: dict[int, set[str]] = {}
        for replicate, method in zip(
            table.column("replicate").to_pylist(), table.column("method").to_pylist()
        ):
            seen.setdefault(replicate, set()).add(method)
        complete = {replicate for replicate, found in seen.items() if found >= set(methods)}
        if len(complete) != len(seen):
            replicates = table.column("replicate").to_pylist()
            keep = pa.array([replicate in complete for replicate in replicates])
            self._rewrite(table.filter(keep))
        return complete

    def _rewrite(self, table: pa.Table) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        pacsv.write_csv(table, self.path)

    def prepare(self, *, resume: bool) -> None:
        if self.exists() and not resume:
            raise ResumeConflictError(f"{self.path} already exists; pass --resume to continue it")
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, records: Sequence[ReplicateRecord]) -> int:
        table = records_table(records, self.n_coefficients)
        header = not self.exists()
        with self.path.open("ab") as sink:
            pacsv.write_csv(table, sink, write_options=pacsv.WriteOptions(include_header=header))
        return table.num_rows


def write_json(payload: dict[str, object], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> dict[str, object]:
    return json.loads(path.read_text(encoding="utf-8"))


def write_parquet(table: pa.Table, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    pq.write_table(table, path, compression="zstd", compression_level=9, write_statistics=True)
    return path


def write_csv(table: pa.Table, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    pacsv.write_csv(table, path)
    return path


def _calibration_metadata(calibration: Calibration) -> dict[bytes, bytes]:
    return {
        b"schema_version": str(SCHEMA_VERSION).encode(),
        b"calibration_version": str(calibration.version).encode(),
        b"seed": str(calibration.seed).encode(),
        b"draws": str(calibration.draws).encode(),
        b"correlation_hash": calibration.correlation_hash.encode(),
    }


def save_calibration(calibration: Calibration, directory: Path) -> Path:
    covariates = pa.Table.from_pylist(
        [
            {
                "covariate": item.name,
                "q1": item.q1,
                "q3": item.q3,
                "bound": item.bound,
                "spread": item.spread,
                "beta": item.beta,
            }
            for item in calibration.covariates
        ],
        schema=COVARIATE_CALIBRATION_SCHEMA.with_metadata(_calibration_metadata(calibration)),
    )
    intercepts = pa.Table.from_pylist(
        [
            {"intercept_key": key, "beta0": value}
            for key, value in sorted(calibration.intercepts.items())
        ],
        schema=INTERCEPT_SCHEMA,
    )
    write_parquet(covariates, directory / "covariates.parquet")
    write_parquet(intercepts, directory / "intercepts.parquet")
    return directory


def load_calibration(directory: Path) -> Calibration | None:
    covariates_path = directory / "covariates.parquet"
    intercepts_path = directory / "intercepts.parquet"
    if not covariates_path.exists() or not intercepts_path.exists():
        return None
    covariates = pq.read_table(covariates_path)
    metadata = covariates.schema.metadata or {}
    if int(metadata.get(b"calibration_version", b"0")) != CALIBRATION_VERSION:
        return None
    intercepts = pq.read_table(intercepts_path).to_pylist()
    return Calibration(
        covariates=tuple(
            CovariateCalibration(
                name=row["covariate"],
                q1=row["q1"],
                q3=row["q3"],
                bound=row["bound"],
                spread=row["spread"],
                beta=row["beta"],
            )
            for row in covariates.to_pylist()
        ),
        intercepts={row["intercept_key"]: row["beta0"] for row in intercepts},
        seed=int(metadata[b"seed"]),
        draws=int(metadata[b"draws"]),
        correlation_hash=metadata[b"correlation_hash"].decode(),
    )
