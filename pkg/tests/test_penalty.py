import math

import numpy as np
import pytest
from scipy.stats import norm

from penalized_logit.glm import expit, fit_ml
from penalized_logit.illustrate import cell_dataset, illustrative_datasets
from penalized_logit.models import Dataset
from penalized_logit.penalty import (
    ConstantColumnError,
    PenaltySpec,
    PriorSpec,
    Standardizer,
    augment,
    destandardize,
    fit_firth,
    fit_ridge_augmented,
    fit_ridge_direct,
    flic,
    penalized_objective_value,
    prior_to_lambda,
    standardize,
)


def _random_dataset(seed: int = 3, n: int = 50, k: int = 4) -> Dataset:
    rng = np.random.default_rng(seed)
    covariates = rng.normal(loc=1.0, scale=2.0, size=(n, k))
    eta = -0.3 + covariates @ np.linspace(0.4, -0.2, k) / 2.0
    return Dataset.from_covariates(covariates, rng.binomial(1, expit(eta)))


@pytest.mark.parametrize(
    ("name", "expected"),
    [
        ("dataset1", math.log(9.5 * 20.5 / (71.5 * 0.5))),
        ("dataset2", math.log(9.5 * 19.5 / (71.5 * 1.5))),
    ],
)
def test_firth_equals_half_cell_correction_for_binary_exposure(name: str, expected: float) -> None:
    fit = fit_firth(illustrative_datasets()[name])

    assert fit.converged
    assert fit.beta[1] == pytest.approx(expected, abs=1e-5)


def test_firth_is_zero_on_a_symmetric_table() -> None:
    fit = fit_firth(cell_dataset({(0, 0): 10, (0, 1): 10, (1, 0): 10, (1, 1): 10}))

    assert fit.beta[1] == pytest.approx(0.0, abs=1e-10)


def test_firth_predictions_are_invariant_to_affine_recoding() -> None:
    data = _random_dataset()
    recoded = data.with_design(np.column_stack([data.X[:, 0], 3.0 * data.X[:, 1:] - 2.0]))

    original = fit_firth(data)
    transformed = fit_firth(recoded)

    np.testing.assert_allclose(
        expit(data.X @ original.beta), expit(recoded.X @ transformed.beta), atol=1e-8
    )


def test_flic_keeps_slopes_and_matches_the_event_rate() -> None:
    data = illustrative_datasets()["dataset2"]
    firth = fit_firth(data)

    fit = flic(data, firth)

    np.testing.assert_array_equal(fit.slopes, firth.slopes)
    assert float(np.mean(expit(data.X @ fit.beta))) == pytest.approx(0.10, abs=1e-8)


def test_flic_on_intercept_only_data_is_the_logit_of_the_rate() -> None:
    data = Dataset.create(np.ones((20, 1)), np.r_[np.ones(4), np.zeros(16)])

    fit = flic(data, fit_firth(data))

    assert fit.beta[0] == pytest.approx(math.log(0.2 / 0.8), abs=1e-8)


def test_standardize_round_trip_preserves_predictions() -> None:
    data = _random_dataset()
    std_data, std = standardize(data)
    beta_std = fit_ml(std_data).beta

    beta = destandardize(beta_std, std)

    np.testing.assert_allclose(std_data.X[:, 1:].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(std_data.X[:, 1:].std(axis=0, ddof=1), 1.0)
    np.testing.assert_allclose(expit(data.X @ beta), expit(std_data.X @ beta_std), atol=1e-10)
    np.testing.assert_allclose(std.standardize_beta(beta), beta_std, atol=1e-10)


def test_destandardize_examples() -> None:
    beta = np.array([0.1, -0.4])

    np.testing.assert_array_equal(destandardize(beta, Standardizer.identity(1)), beta)
    single = Standardizer(means=np.array([0.9]), sds=np.array([0.3015]))
    assert destandardize(np.array([0.0, 0.2]), single)[1] == pytest.approx(0.6633, abs=1e-4)


def test_constant_covariates_cannot_be_standardized() -> None:
    data = Dataset.from_covariates(np.ones(5), np.array([0, 1, 0, 1, 0]))

    with pytest.raises(ConstantColumnError, match="constant"):
        standardize(data)


def test_augmentation_appends_weighted_pseudo_records() -> None:
    std_data, _ = standardize(_random_dataset(k=2))
    spec = PenaltySpec.create(0.5, std_data.p)

    augmented = augment(std_data, spec)

    assert augmented.n == std_data.n + 4
    np.testing.assert_array_equal(augmented.y[-4:], [1.0, 0.0, 1.0, 0.0])
    np.testing.assert_allclose(augmented.w[-4:], 2 * 10.0**2 * 0.5)
    np.testing.assert_array_equal(augmented.X[-4:, 0], 0.0)
    assert augmented.X[-4, 1] == pytest.approx(0.1)
    assert augmented.pseudo[-4:].all()


@pytest.mark.parametrize("lam", [1e-2, 0.5, 2.0, 100.0])
def test_augmented_ridge_agrees_with_direct_penalized_newton(lam: float) -> None:
    std_data, _ = standardize(_random_dataset())
    spec = PenaltySpec.create(lam, std_data.p)

    augmented = fit_ridge_augmented(std_data, spec)
    direct = fit_ridge_direct(std_data, spec)

    np.testing.assert_allclose(augmented.beta, direct.beta, atol=1e-3)
    assert float(np.mean(expit(std_data.X @ augmented.beta))) == pytest.approx(
        float(np.mean(std_data.y)), abs=1e-8
    )


def test_larger_rescaling_tightens_the_augmentation() -> None:
    std_data, _ = standardize(_random_dataset())
    coarse = PenaltySpec.create(1.0, std_data.p, rescale_s=10.0)
    fine = PenaltySpec.create(1.0, std_data.p, rescale_s=100.0)
    direct = fit_ridge_direct(std_data, fine)

    np.testing.assert_allclose(fit_ridge_augmented(std_data, fine).beta, direct.beta, atol=1e-4)
    assert np.max(np.abs(fit_ridge_augmented(std_data, fine).beta - direct.beta)) <= np.max(
        np.abs(fit_ridge_augmented(std_data, coarse).beta - direct.beta)
    ) + 1e-12


def test_direct_ridge_without_penalty_is_ml() -> None:
    std_data, _ = standardize(_random_dataset())

    np.testing.assert_allclose(
        fit_ridge_direct(std_data, PenaltySpec.create(0.0, std_data.p)).beta,
        fit_ml(std_data).beta,
        atol=1e-8,
    )


def test_direct_ridge_is_a_local_maximum() -> None:
    std_data, _ = standardize(_random_dataset())
    spec = PenaltySpec.create(1.0, std_data.p)
    beta = fit_ridge_direct(std_data, spec).beta
    best = penalized_objective_value(std_data, spec, beta)
    rng = np.random.default_rng(11)

    for _ in range(100):
        step = rng.normal(size=beta.size)
        step *= 1e-3 / np.linalg.norm(step)
        assert penalized_objective_value(std_data, spec, beta + step) <= best + 1e-12


def test_stronger_penalty_shrinks_slopes() -> None:
    std_data, _ = standardize(_random_dataset())
    norms = [
        np.linalg.norm(fit_ridge_augmented(std_data, PenaltySpec.create(lam, std_data.p)).slopes)
        for lam in (1e-3, 1e-1, 1.0, 10.0, 100.0)
    ]

    assert all(later <= earlier + 1e-8 for earlier, later in zip(norms, norms[1:]))
    assert norms[-1] < 0.2 * norms[0]


@pytest.mark.parametrize(
    ("or_upper", "expected", "tolerance"),
    [(4.0, 2.0, 2e-3), (16.0, 0.5, 1e-3), (math.exp(norm.ppf(0.975)), 1.0, 1e-12)],
)
def test_prior_interval_maps_to_lambda(or_upper: float, expected: float, tolerance: float) -> None:
    assert prior_to_lambda(PriorSpec(or_upper=or_upper)) == pytest.approx(expected, abs=tolerance)


def test_prior_needs_an_upper_bound_above_one() -> None:
    with pytest.raises(ValueError, match="exceed 1"):
        PriorSpec(or_upper=1.0)
