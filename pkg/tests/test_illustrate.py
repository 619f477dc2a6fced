import json

import pyarrow.csv as pacsv
import pytest

from penalized_logit.estimators import FitSettings
from penalized_logit.illustrate import (
    DEVIATION_METHODS,
    IllustrateTask,
    fixed_dataset_rows,
    loocv_profile_rows,
    run_illustrate,
    run_illustrate_replicate,
)
from penalized_logit.tuning import LambdaGrid

SMALL_SETTINGS = FitSettings(grid=LambdaGrid.log_spaced(-6, 2, 41))


def test_rows_for_both_fixed_datasets() -> None:
    rows = {(row["dataset"], row["method"]): row for row in fixed_dataset_rows(SMALL_SETTINGS)}

    assert len(rows) == 6
    assert rows["dataset1", "FC"]["beta1"] == pytest.approx(1.70, abs=0.02)
    assert rows["dataset2", "FC"]["beta1"] == pytest.approx(0.55, abs=0.02)
    assert rows["dataset1", "IP"]["lambda_star"] == 2.0
    separated_d = rows["dataset1", "D"]
    assert separated_d["lambda_star"] == pytest.approx(1e-6)
    assert separated_d["boundary_hit"] and separated_d["separated"]
    assert "separation_suspected" in separated_d["flags"].split(";")
    assert "separation_suspected" not in rows["dataset1", "IP"]["flags"]
    assert not rows["dataset2", "D"]["separated"]
    assert rows["dataset2", "D"]["lambda_star"] == pytest.approx(100.0)


def test_cell_components_sum_to_the_profile() -> None:
    profiles, components = loocv_profile_rows(SMALL_SETTINGS)

    assert len(profiles) == 2 * 41
    assert len(components) == (3 + 4) * 41
    for profile in profiles[::10]:
        matching = [
            row["deviance"]
            for row in components
            if row["dataset"] == profile["dataset"] and row["lambda"] == profile["lambda"]
        ]
        assert sum(matching) == pytest.approx(profile["deviance"])
    counts = {
        (row["x"], row["y"]): row["count"] for row in components if row["dataset"] == "dataset2"
    }
    assert counts == {(0, 0): 19, (0, 1): 1, (1, 0): 71, (1, 1): 9}


def test_generated_replicates_are_reproducible() -> None:
    task = IllustrateTask(seed=3, replicate=7, n=100, settings=SMALL_SETTINGS)

    first = run_illustrate_replicate(task)
    second = run_illustrate_replicate(task)

    assert first is not None
    assert first == second
    assert set(first.beta1) == set(DEVIATION_METHODS)
    assert first.lambda_star in set(SMALL_SETTINGS.grid.values)


def test_illustrate_writes_all_outputs(tmp_path, capsys) -> None:
    report = run_illustrate(tmp_path, seed=3, reps=12, settings=SMALL_SETTINGS)

    assert report.used + report.skipped == 12
    for name in (
        "fixed_datasets.csv",
        "loocv_profiles.csv",
        "loocv_components.csv",
        "lambda_histogram.csv",
        "coefficient_deviations.csv",
        "summary.json",
    ):
        assert (tmp_path / name).exists(), name
    histogram = pacsv.read_csv(tmp_path / "lambda_histogram.csv")
    assert sum(histogram.column("count").to_pylist()) == report.used
    deviations = pacsv.read_csv(tmp_path / "coefficient_deviations.csv")
    assert deviations.num_rows == report.used * len(DEVIATION_METHODS)
    assert 0.0 <= report.boundary_low_fraction <= 1.0
    summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
    assert summary["used"] == report.used
    events = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert events[-1]["event"] == "illustrate_progress"
    assert (events[-1]["done"], events[-1]["used"]) == (12, report.used)


@pytest.mark.slow
def test_deviance_tuning_often_lands_on_the_smallest_lambda(tmp_path) -> None:
    report = run_illustrate(tmp_path, seed=2021, reps=1000)

    assert report.boundary_low_fraction == pytest.approx(0.143, abs=0.03)
