import numpy as np
import pytest

from penalized_logit.estimators import (
    METHODS,
    FitSettings,
    MethodWorkspace,
    UnknownMethodError,
    check_methods,
    fit_methods,
)
from penalized_logit.glm import expit
from penalized_logit.illustrate import illustrative_datasets
from penalized_logit.models import BOUNDARY_LAMBDA, NONCONVERGENCE, SEPARATION_SUSPECTED, Dataset
from penalized_logit.penalty import PriorSpec, prior_to_lambda
from penalized_logit.tuning import LambdaGrid

SMALL_SETTINGS = FitSettings(grid=LambdaGrid.log_spaced(-6, 2, 41), rcv_reps=3)


def _random_dataset(seed: int = 21, n: int = 80) -> Dataset:
    rng = np.random.default_rng(seed)
    covariates = rng.normal(size=(n, 2)) * np.array([1.0, 5.0]) + 3.0
    pi = expit(-1.5 + 0.7 * (covariates[:, 0] - 3.0) + 0.1 * (covariates[:, 1] - 3.0))
    return Dataset.from_covariates(covariates, rng.binomial(1, pi))


@pytest.mark.parametrize(
    ("name", "method", "expected", "tolerance"),
    [
        ("dataset1", "FC", 1.70, 0.02),
        ("dataset2", "FC", 0.55, 0.02),
        ("dataset1", "IP", 1.54, 0.03),
        ("dataset2", "IP", 0.65, 0.03),
        ("dataset2", "D", 0.06, 0.03),
    ],
)
def test_fixed_dataset_estimates(name: str, method: str, expected: float, tolerance: float) -> None:
    workspace = MethodWorkspace(illustrative_datasets()[name])

    fit = workspace.fit(method)

    assert fit.converged
    assert fit.beta[1] == pytest.approx(expected, abs=tolerance)


def test_deviance_tuning_on_the_separated_dataset_sits_at_the_lower_boundary() -> None:
    workspace = MethodWorkspace(illustrative_datasets()["dataset1"])

    fit = workspace.fit("D")

    assert fit.lambda_star == pytest.approx(1e-6)
    assert fit.boundary_hit
    assert BOUNDARY_LAMBDA in fit.flags
    assert SEPARATION_SUSPECTED not in fit.flags


def test_known_separation_marks_fits_tuned_to_the_lowest_lambda() -> None:
    data = illustrative_datasets()["dataset1"]
    workspace = MethodWorkspace(data, SMALL_SETTINGS, separated=True)

    deviance = workspace.fit("D")
    informative = workspace.fit("IP")

    assert {BOUNDARY_LAMBDA, SEPARATION_SUSPECTED} <= deviance.flags
    assert SEPARATION_SUSPECTED not in informative.flags
    unseparated = MethodWorkspace(illustrative_datasets()["dataset2"], separated=False)
    assert SEPARATION_SUSPECTED not in unseparated.fit("D").flags


def test_fixed_prior_penalties_match_their_odds_ratio_intervals() -> None:
    settings = FitSettings()

    assert settings.ip_lambda == pytest.approx(prior_to_lambda(PriorSpec(or_upper=4.0)), abs=2e-3)
    assert settings.wp_lambda == pytest.approx(prior_to_lambda(PriorSpec(or_upper=16.0)), abs=1e-3)


def test_ml_on_separated_data_is_reported_not_raised() -> None:
    fit = MethodWorkspace(illustrative_datasets()["dataset1"]).fit("ML")

    assert not fit.converged
    assert NONCONVERGENCE in fit.flags


def test_all_methods_return_coefficients_on_the_original_scale() -> None:
    data = _random_dataset()
    rng = np.random.default_rng(4)

    fits = fit_methods(
        data,
        METHODS,
        SMALL_SETTINGS,
        rng=rng,
        beta1_true=0.7,
        pi_true=expit(-1.5 + 0.7 * (data.X[:, 1] - 3.0) + 0.1 * (data.X[:, 2] - 3.0)),
    )

    assert set(fits) == set(METHODS)
    for method, fit in fits.items():
        assert fit.beta.shape == (3,), method
        assert np.all(np.isfinite(fit.beta)), method
    for method in ("D", "GCV", "CE", "AIC", "OEX", "OP", "RCV50", "RCV95"):
        assert fits[method].lambda_star is not None
        assert fits[method].boundary_hit is not None
    assert fits["IP"].lambda_star == 2.0
    assert fits["WP"].lambda_star == 0.5
    assert fits["RCV50"].lambda_star <= fits["RCV95"].lambda_star


def test_flic_matches_the_event_rate_on_the_original_scale() -> None:
    data = _random_dataset()

    fit = MethodWorkspace(data).fit("FLIC")

    assert float(np.mean(expit(data.X @ fit.beta))) == pytest.approx(data.event_rate(), abs=1e-8)


def test_stronger_fixed_penalty_shrinks_the_slope() -> None:
    workspace = MethodWorkspace(illustrative_datasets()["dataset2"])

    weak = workspace.fit("WP")
    strong = workspace.fit("IP")

    assert abs(strong.beta[1]) < abs(weak.beta[1])
    assert workspace.fit_fixed(0.5).beta == pytest.approx(weak.beta)


def test_oracles_and_repeated_cv_need_their_inputs() -> None:
    workspace = MethodWorkspace(_random_dataset(), SMALL_SETTINGS)

    with pytest.raises(ValueError, match="true first slope"):
        workspace.fit("OEX")
    with pytest.raises(ValueError, match="true probabilities"):
        workspace.fit("OP")
    with pytest.raises(ValueError, match="random generator"):
        workspace.fit("RCV50")


def test_unknown_methods_are_rejected() -> None:
    with pytest.raises(UnknownMethodError, match="LASSO"):
        check_methods(["FC", "LASSO"])
    with pytest.raises(UnknownMethodError):
        MethodWorkspace(_random_dataset()).fit("LASSO")
    assert check_methods(["Optimal"], allow_reference=True) == ("Optimal",)
