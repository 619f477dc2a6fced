import math

import numpy as np
import pytest

from penalized_logit.glm import (
    NonConvergenceError,
    clip_probabilities,
    expit,
    fit_ml,
    fit_ml_batch,
    log_likelihood,
    score_and_fisher,
)
from penalized_logit.illustrate import illustrative_datasets
from penalized_logit.models import (
    SEPARATION_SUSPECTED,
    Dataset,
    DimensionMismatchError,
    InvalidDatasetError,
)


def _random_dataset(seed: int = 7, n: int = 200) -> Dataset:
    rng = np.random.default_rng(seed)
    covariates = rng.normal(size=(n, 2))
    pi = 1.0 / (1.0 + np.exp(-(-0.5 + covariates @ np.array([0.8, -0.4]))))
    return Dataset.from_covariates(covariates, rng.binomial(1, pi))


def test_ml_matches_closed_form_log_odds_ratio() -> None:
    data = illustrative_datasets()["dataset2"]

    fit = fit_ml(data)

    assert fit.converged
    assert fit.beta[1] == pytest.approx(math.log(9 * 19 / (71 * 1)), abs=1e-6)
    assert fit.beta[0] == pytest.approx(math.log(1 / 19), abs=1e-6)
    assert fit.gradient_norm <= 1e-8


def test_separated_data_report_nonconvergence_with_last_iterate() -> None:
    data = illustrative_datasets()["dataset1"]

    with pytest.raises(NonConvergenceError) as caught:
        fit_ml(data)

    assert caught.value.result is not None
    assert not caught.value.result.converged
    assert SEPARATION_SUSPECTED in caught.value.result.flags


def test_log_likelihood_matches_direct_summation() -> None:
    data = illustrative_datasets()["dataset2"]
    beta = fit_ml(data).beta

    expected = 0.0
    for row, outcome in zip(data.X, data.y):
        pi = 1.0 / (1.0 + math.exp(-float(row @ beta)))
        expected += math.log(pi) if outcome == 1 else math.log(1.0 - pi)

    assert log_likelihood(data, beta) == pytest.approx(expected, abs=1e-9)


def test_score_vanishes_and_fisher_is_symmetric_at_the_estimate() -> None:
    data = _random_dataset()
    fit = fit_ml(data)

    gradient, fisher = score_and_fisher(data, fit.beta)

    assert np.max(np.abs(gradient)) <= 1e-8
    np.testing.assert_allclose(fisher, fisher.T)
    assert np.all(np.linalg.eigvalsh(fisher) > 0)


def test_expit_examples_and_saturation() -> None:
    with np.errstate(over="raise"):
        saturated = expit(np.array([40.0, -40.0, 1000.0, -1000.0]))

    assert expit(-3.05) == pytest.approx(0.0452, abs=5e-5)
    assert 1.0 - 1e-15 < saturated[0] <= 1.0
    assert 0.0 < saturated[1] < 1e-15
    assert np.all((saturated >= 0.0) & (saturated <= 1.0))


def test_score_matches_central_finite_differences() -> None:
    rng = np.random.default_rng(17)
    step = 1e-5

    for _ in range(50):
        data = Dataset.from_covariates(rng.normal(size=(10, 2)), rng.binomial(1, 0.4, size=10))
        beta = rng.normal(size=3)
        gradient, _ = score_and_fisher(data, beta)
        numeric = [
            (log_likelihood(data, beta + step * unit) - log_likelihood(data, beta - step * unit))
            / (2.0 * step)
            for unit in np.eye(3)
        ]
        np.testing.assert_allclose(gradient, numeric, rtol=0.0, atol=1e-6)


def test_ml_is_equivariant_under_affine_recoding() -> None:
    data = _random_dataset()
    covariates = data.X[:, 1:]
    recoded = Dataset.from_covariates(
        covariates @ np.array([[2.0, 0.5], [0.0, -3.0]]) + np.array([1.0, -4.0]), data.y
    )

    original = fit_ml(data)
    transformed = fit_ml(recoded)

    np.testing.assert_allclose(
        recoded.X @ transformed.beta, data.X @ original.beta, rtol=0.0, atol=1e-8
    )
    assert transformed.loglik == pytest.approx(original.loglik, abs=1e-9)


def test_refitting_from_the_estimate_takes_no_steps() -> None:
    data = _random_dataset()
    fit = fit_ml(data)

    refit = fit_ml(data, init=fit.beta)

    assert refit.converged
    assert refit.iterations == 0
    np.testing.assert_array_equal(refit.beta, fit.beta)


def test_constant_offset_moves_only_the_intercept() -> None:
    data = _random_dataset()
    plain = fit_ml(data)

    shifted = fit_ml(data, offset=np.full(data.n, 0.3))

    assert shifted.beta[0] == pytest.approx(plain.beta[0] - 0.3, abs=1e-6)
    np.testing.assert_allclose(shifted.slopes, plain.slopes, atol=1e-6)


def test_frozen_coordinates_stay_at_their_initial_values() -> None:
    data = _random_dataset()

    fit = fit_ml(data, frozen=[1, 2], init=np.array([0.0, 0.5, 0.25]))

    assert fit.converged
    np.testing.assert_array_equal(fit.beta[1:], [0.5, 0.25])


def test_zero_weights_drop_rows_from_the_likelihood() -> None:
    data = _random_dataset()
    keep = np.arange(data.n) % 3 != 0
    weighted = Dataset.from_covariates(data.X[:, 1:], data.y, keep.astype(float))

    np.testing.assert_allclose(
        fit_ml(weighted).beta, fit_ml(data.rows(np.flatnonzero(keep))).beta, atol=1e-6
    )


def test_batched_fits_agree_with_individual_refits() -> None:
    data = _random_dataset(n=60)
    weights = np.ones((3, data.n))
    weights[0, :5] = 0.0
    weights[1, 10:20] = 0.0
    weights[2, -1] = 0.0

    batch = fit_ml_batch(data, weights, fit_ml(data).beta)

    assert batch.converged.all()
    for member in range(3):
        rows = np.flatnonzero(weights[member] > 0)
        np.testing.assert_allclose(batch.beta[member], fit_ml(data.rows(rows)).beta, atol=1e-6)


def test_probability_clipping_reports_when_it_applies() -> None:
    clipped, changed = clip_probabilities(np.array([0.0, 0.5, 1.0]))

    assert changed
    assert clipped[0] == pytest.approx(1e-10)
    assert clipped[2] == pytest.approx(1 - 1e-10)
    assert clip_probabilities(np.array([0.2, 0.8]))[1] is False


def test_dataset_contract_is_enforced() -> None:
    with pytest.raises(InvalidDatasetError, match="exactly 0 or 1"):
        Dataset.from_covariates(np.arange(3.0), np.array([0.0, 0.5, 1.0]))
    with pytest.raises(InvalidDatasetError, match="nonnegative"):
        Dataset.from_covariates(np.arange(3.0), np.array([0, 1, 1]), np.array([1.0, -1.0, 1.0]))
    with pytest.raises(DimensionMismatchError):
        Dataset.from_covariates(np.arange(3.0), np.array([0, 1]))
    with pytest.raises(DimensionMismatchError, match="coefficients"):
        fit_ml(_random_dataset(), init=np.zeros(2))
