from functools import cache

import numpy as np
import pytest

from penalized_logit.simgen import (
    COVARIATES,
    EFFECT_LOG_ODDS,
    PRINTED_BETA10,
    Calibration,
    CalibrationError,
    ScenarioConfig,
    all_scenarios,
    build_correlation,
    calibrate,
    calibration_sample,
    default_correlation,
    generate_dataset,
    generate_validation,
    illustrative_generator,
)

DRAWS = 20_000
SCENARIO = ScenarioConfig(n=100, k=5, a=1.0, ey_target=0.1, noise=True, master_seed=17)


@cache
def _calibration() -> Calibration:
    return calibrate([SCENARIO], draws=DRAWS)


def test_default_correlation_is_a_valid_correlation_matrix() -> None:
    correlation = default_correlation()

    np.testing.assert_allclose(correlation.matrix, correlation.matrix.T)
    np.testing.assert_allclose(np.diag(correlation.matrix), 1.0)
    assert np.linalg.eigvalsh(correlation.matrix).min() > 0
    np.testing.assert_allclose(
        correlation.cholesky @ correlation.cholesky.T, correlation.matrix, atol=1e-12
    )
    assert correlation.report()["report_hash"] == correlation.report_hash


def test_repeated_mentions_are_averaged() -> None:
    correlation = build_correlation({1: ((2, 0.5),), 2: ((1, 0.3),)}, size=3)

    assert correlation.matrix[0, 1] == pytest.approx(0.4)
    assert correlation.matrix[1, 0] == pytest.approx(0.4)
    assert correlation.repaired_entries == ()


def test_indefinite_assembly_is_repaired() -> None:
    entries = {1: ((2, 0.9), (3, 0.9)), 2: ((3, -0.9),)}

    correlation = build_correlation(entries, size=3)

    assert np.linalg.eigvalsh(correlation.assembled).min() < 0
    assert np.linalg.eigvalsh(correlation.matrix).min() >= 1e-6
    assert correlation.repaired_entries


def test_late_noise_covariates_have_their_own_latent_sources() -> None:
    sample = calibration_sample(default_correlation(), draws=2_000)
    names = [spec.name for spec in COVARIATES]
    x10, x14, x15 = (sample[:, names.index(name)] for name in ("x10", "x14", "x15"))

    assert not np.array_equal(x14, x10)
    assert not np.array_equal(x15, x10)
    assert not np.array_equal(x14, x15)
    assert abs(np.corrcoef(x14, x15)[0, 1]) < 0.9


def test_scenario_identifiers_and_grid() -> None:
    scenarios = all_scenarios()

    assert len(scenarios) == 72
    assert len({scenario.scenario_id for scenario in scenarios}) == 72
    assert SCENARIO.scenario_id == "N100-K5-a1-ey0.1-noise1"
    assert SCENARIO.intercept_key == "K5-a1-ey0.1"
    assert SCENARIO.columns == (0, 1, 2, 3, 4, 10, 11, 12, 13, 14)
    assert ScenarioConfig.parse("250, 2, 0.5, 0.25, 0") == ScenarioConfig(250, 2, 0.5, 0.25, False)


@pytest.mark.parametrize("text", ["100,5,1,0.1", "100,5,1,1.5,0", "100,11,1,0.1,0", "5,2,1,0.1,0"])
def test_invalid_scenarios_are_rejected(text: str) -> None:
    with pytest.raises(ValueError):
        ScenarioConfig.parse(text)


def test_calibrated_effects_follow_the_sextile_rule() -> None:
    calibration = _calibration()
    sample = calibration_sample(default_correlation(), DRAWS)

    for index, item in enumerate(calibration.covariates):
        spec = COVARIATES[index]
        if spec.beta is None:
            assert item.beta == pytest.approx(EFFECT_LOG_ODDS / item.spread)
        else:
            assert item.beta == spec.beta
        if spec.continuous:
            q1, q3 = np.quantile(sample[:, index], [0.25, 0.75])
            assert item.bound == pytest.approx(q3 + 5 * (q3 - q1))
        else:
            assert item.bound == float("inf")
    assert calibration.covariates[9].beta != PRINTED_BETA10


def test_printed_effect_can_replace_the_calibrated_one() -> None:
    calibration = calibrate([SCENARIO], draws=DRAWS, printed_beta10=True)

    assert calibration.covariates[9].beta == PRINTED_BETA10


def test_intercept_hits_the_target_event_rate() -> None:
    calibration = _calibration()

    validation = generate_validation(
        SCENARIO, np.random.default_rng(99), calibration, size=200_000
    )

    assert float(validation.pi_true.mean()) == pytest.approx(0.1, abs=0.005)


def test_missing_intercepts_raise_and_calibration_extends() -> None:
    calibration = _calibration()
    other = ScenarioConfig(n=100, k=2, a=0.5, ey_target=0.25, noise=False)

    assert not calibration.covers([other])
    with pytest.raises(CalibrationError, match="No calibrated intercept"):
        calibration.intercept(other)
    extended = calibrate([other], draws=DRAWS, existing=calibration)
    assert extended.covers([SCENARIO, other])
    assert extended.intercept(SCENARIO) == calibration.intercept(SCENARIO)


def test_generation_is_deterministic_per_replicate() -> None:
    calibration = _calibration()

    first = generate_dataset(SCENARIO, 3, calibration)
    again = generate_dataset(SCENARIO, 3, calibration)
    other = generate_dataset(SCENARIO, 4, calibration)

    np.testing.assert_array_equal(first.data.X, again.data.X)
    np.testing.assert_array_equal(first.data.y, again.data.y)
    assert not np.array_equal(first.data.X, other.data.X)
    assert first.data.n == 100
    assert first.data.p == 11
    assert first.columns[-1] == "x15"
    np.testing.assert_array_equal(first.beta_true[5:], 0.0)
    assert np.all(first.data.X[:, 1:] <= calibration.bounds[list(SCENARIO.columns)])


def test_illustrative_generator_matches_its_design() -> None:
    generated = illustrative_generator(20_000, rng=np.random.default_rng(2))

    assert float(generated.data.X[:, 1].mean()) == pytest.approx(0.8, abs=0.01)
    np.testing.assert_array_equal(generated.coefficients, [-3.05, 1.0])
    assert set(np.unique(generated.pi_true).round(6)) == {
        round(1 / (1 + np.exp(3.05)), 6),
        round(1 / (1 + np.exp(2.05)), 6),
    }
