import math

import pyarrow.parquet as pq
import pytest

from penalized_logit.models import ReplicateRecord
from penalized_logit.simgen import ScenarioConfig, calibrate
from penalized_logit.storage import (
    RecordStore,
    ResumeConflictError,
    load_calibration,
    read_json,
    record_schema,
    records_table,
    save_calibration,
    write_json,
)


def _record(replicate: int, method: str, **changes) -> ReplicateRecord:
    values = {
        "scenario_id": "N100-K1-a1-ey0.1-noise0",
        "replicate": replicate,
        "method": method,
        "lambda_star": None,
        "boundary_hit": None,
        "separated": False,
        "converged": True,
        "beta": (-2.0, 0.5),
        "slope": 0.9,
        "cindex": 0.7,
        "rmse_pred_contrib": 0.001,
        "flags": (),
    }
    values.update(changes)
    return ReplicateRecord(**values)


def test_record_columns_and_missing_values() -> None:
    table = records_table(
        [
            _record(0, "D", lambda_star=1e-6, boundary_hit=True, flags=("b", "a")),
            _record(0, "ML", beta=(math.nan, math.inf), converged=False, slope=None),
        ],
        n_coefficients=2,
    )

    assert table.column_names == [
        "scenario_id",
        "replicate",
        "method",
        "lambda_star",
        "boundary_hit",
        "separated",
        "converged",
        "beta0",
        "beta1",
        "slope",
        "cindex",
        "rmse_pred_contrib",
        "flags",
    ]
    rows = table.to_pylist()
    assert rows[0]["flags"] == "a;b"
    assert rows[1]["beta0"] is None and rows[1]["beta1"] is None
    assert rows[1]["lambda_star"] is None and rows[1]["boundary_hit"] is None
    assert table.schema.metadata[b"schema_version"] == b"1"


def test_coefficient_count_must_match_the_schema() -> None:
    with pytest.raises(ValueError, match="expected 3"):
        records_table([_record(0, "FC")], n_coefficients=3)


def test_appends_round_trip_through_csv(tmp_path) -> None:
    store = RecordStore(tmp_path / "records" / "scenario.csv", n_coefficients=2)
    store.prepare(resume=False)

    store.append([_record(0, "FC"), _record(0, "D", lambda_star=0.3, boundary_hit=False)])
    store.append([_record(1, "FC", slope=None), _record(1, "D", lambda_star=2.0)])
    table = store.read()

    assert table.schema.names == record_schema(2).names
    assert table.schema.types == record_schema(2).types
    assert table.num_rows == 4
    assert table.column("lambda_star").to_pylist() == [None, 0.3, None, 2.0]
    assert table.column("slope").to_pylist()[2] is None
    assert table.column("flags").to_pylist() == ["", "", "", ""]


def test_resume_drops_a_partially_written_replicate(tmp_path) -> None:
    store = RecordStore(tmp_path / "scenario.csv", n_coefficients=2)
    store.append([_record(0, "FC"), _record(0, "D"), _record(1, "FC")])

    completed = store.completed_replicates(["FC", "D"])

    assert completed == {0}
    assert store.read().column("replicate").to_pylist() == [0, 0]


def test_existing_records_require_resume(tmp_path) -> None:
    store = RecordStore(tmp_path / "scenario.csv", n_coefficients=2)
    store.append([_record(0, "FC")])

    with pytest.raises(ResumeConflictError, match="--resume"):
        store.prepare(resume=False)
    store.prepare(resume=True)


def test_calibration_cache_round_trip(tmp_path) -> None:
    scenario = ScenarioConfig(n=100, k=2, a=1.0, ey_target=0.25, noise=False)
    calibration = calibrate([scenario], draws=5_000)

    save_calibration(calibration, tmp_path)
    loaded = load_calibration(tmp_path)

    assert loaded is not None
    assert loaded.covariates == calibration.covariates
    assert dict(loaded.intercepts) == dict(calibration.intercepts)
    assert (loaded.seed, loaded.draws, loaded.correlation_hash) == (
        calibration.seed,
        5_000,
        calibration.correlation_hash,
    )
    metadata = pq.read_table(tmp_path / "covariates.parquet").schema.metadata
    assert metadata[b"draws"] == b"5000"


def test_missing_calibration_cache_loads_as_none(tmp_path) -> None:
    assert load_calibration(tmp_path) is None


def test_json_documents_are_sorted_and_round_trip(tmp_path) -> None:
    path = write_json({"b": 1, "a": [1, 2]}, tmp_path / "nested" / "run.json")

    assert read_json(path) == {"a": [1, 2], "b": 1}
    assert path.read_text(encoding="utf-8").index('"a"') < path.read_text().index('"b"')
