"""Method registry: every estimator the harness compares, fitted on one dataset."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_GCV_MODE, IP_LAMBDA, RCV_REPETITIONS, RESCALE_S, WP_LAMBDA
from .glm import FitError, fit_ml
from .models import BOUNDARY_LAMBDA, NONCONVERGENCE, SEPARATION_SUSPECTED, Dataset, FitResult
from .penalty import (
    PenaltySpec,
    fit_firth,
    fit_ridge_augmented,
    flic,
    standardize,
)
from .tuning import (
    CriterionProfile,
    LambdaGrid,
    LoocvPath,
    RcvSelections,
    RidgePath,
    loocv_path,
    oracle_oex,
    oracle_op,
    rcv_selections,
    ridge_path,
    tune_aic,
    tune_ce,
    tune_d,
    tune_gcv,
)

METHODS = ("ML", "FC", "FLIC", "D", "GCV", "CE", "RCV50", "RCV95", "AIC", "IP", "WP", "OEX", "OP")
REFERENCE_METHOD = "Optimal"
FIXED_RIDGE = "ridge"
TUNED_METHODS = frozenset({"D", "GCV", "CE", "RCV50", "RCV95", "AIC", "OEX", "OP"})
ORACLE_METHODS = frozenset({"OEX", "OP"})
RCV_QUANTILES = {"RCV50": 0.5, "RCV95": 0.95}


class UnknownMethodError(ValueError):
    """Raised for method ids outside the registry."""


@dataclass(frozen=True)
class FitSettings:
    grid: LambdaGrid = field(default_factory=LambdaGrid.default)
    gcv_mode: str = DEFAULT_GCV_MODE
    rescale_s: float = RESCALE_S
    rcv_reps: int = RCV_REPETITIONS
    ip_lambda: float = IP_LAMBDA
    wp_lambda: float = WP_LAMBDA


@dataclass(frozen=True, eq=False)
class MethodFit:
    method: str
    beta: np.ndarray
    converged: bool
    lambda_star: float | None = None
    boundary_hit: bool | None = None
    flags: frozenset[str] = frozenset()
    profile: CriterionProfile | None = None


def check_methods(methods: Iterable[str], *, allow_reference: bool = False) -> tuple[str, ...]:
    known = set(METHODS) | ({REFERENCE_METHOD} if allow_reference else set())
    methods = tuple(methods)
    unknown = [method for method in methods if method not in known]
    if unknown:
        raise UnknownMethodError(f"Unknown methods {unknown}; choose from {sorted(known)}")
    return methods


def _settle(fit_call) -> FitResult:
    try:
        return fit_call()
    except FitError as error:
        if error.result is None:
            raise
        return error.result


class MethodWorkspace:
    """Shares standardization, the ridge path, and held-out predictions across methods.

    When ``separated`` is set, fits tuned to the lowest grid λ carry ``separation_suspected``.
    """

    def __init__(
        self,
        data: Dataset,
        settings: FitSettings | None = None,
        *,
        rng: np.random.Generator | None = None,
        beta1_true: float | None = None,
        pi_true: np.ndarray | None = None,
        separated: bool | None = None,
    ) -> None:
        self.data = data
        self.separated = separated
        self.settings = settings or FitSettings()
        self.rng = rng
        self.beta1_true = beta1_true
        self.pi_true = pi_true
        self.std_data, self.standardizer = standardize(data)
        self._path: RidgePath | None = None
        self._loo: LoocvPath | None = None
        self._rcv: RcvSelections | None = None
        self._firth: FitResult | None = None

    @property
    def path(self) -> RidgePath:
        if self._path is None:
            self._path = ridge_path(
                self.std_data, self.settings.grid, rescale_s=self.settings.rescale_s
            )
        return self._path

    @property
    def loo(self) -> LoocvPath:
        if self._loo is None:
            self._loo = loocv_path(self.std_data, self.path)
        return self._loo

    @property
    def rcv(self) -> RcvSelections:
        if self._rcv is None:
            if self.rng is None:
                raise ValueError("Repeated cross-validation needs a random generator")
            self._rcv = rcv_selections(
                self.std_data,
                self.settings.grid,
                reps=self.settings.rcv_reps,
                rng=self.rng,
                path=self.path,
            )
        return self._rcv

    @property
    def firth(self) -> FitResult:
        if self._firth is None:
            self._firth = _settle(lambda: fit_firth(self.std_data))
        return self._firth

    def _result(
        self,
        method: str,
        fit: FitResult,
        *,
        lambda_star: float | None = None,
        boundary_hit: bool | None = None,
        extra: Iterable[str] = (),
        profile: CriterionProfile | None = None,
    ) -> MethodFit:
        flags = set(fit.flags) | set(extra)
        if not fit.converged:
            flags.add(NONCONVERGENCE)
        if boundary_hit:
            flags.add(BOUNDARY_LAMBDA)
        if self.separated and lambda_star is not None and self._at_lower_edge(lambda_star):
            flags.add(SEPARATION_SUSPECTED)
        return MethodFit(
            method=method,
            beta=self.standardizer.destandardize_beta(fit.beta),
            converged=fit.converged,
            lambda_star=lambda_star,
            boundary_hit=boundary_hit,
            flags=frozenset(flags),
            profile=profile,
        )

    def _at_lower_edge(self, lam: float) -> bool:
        return bool(np.isclose(lam, self.settings.grid.values[0], rtol=1e-12, atol=0.0))

    def _ridge(self, lam: float, init: np.ndarray | None = None) -> FitResult:
        spec = PenaltySpec.create(lam, self.std_data.p, rescale_s=self.settings.rescale_s)
        return _settle(lambda: fit_ridge_augmented(self.std_data, spec, init=init))

    def _from_profile(self, method: str, profile: CriterionProfile) -> MethodFit:
        fit = self.path.fits[profile.selected_index]
        return self._result(
            method,
            fit,
            lambda_star=profile.selected,
            boundary_hit=profile.boundary_hit,
            extra=profile.flags[profile.selected_index] if profile.flags else (),
            profile=profile,
        )

    def profile(self, method: str) -> CriterionProfile:
        grid = self.settings.grid
        if method == "D":
            return tune_d(self.std_data, grid, path=self.path, loo=self.loo)
        if method == "CE":
            return tune_ce(self.std_data, grid, path=self.path, loo=self.loo)
        if method == "GCV":
            loo = self.loo if self.settings.gcv_mode == "loocv" else None
            return tune_gcv(
                self.std_data, grid, mode=self.settings.gcv_mode, path=self.path, loo=loo
            )
        if method == "AIC":
            return tune_aic(self.std_data, grid, path=self.path)
        if method == "OEX":
            if self.beta1_true is None:
                raise ValueError("The explanation oracle needs the true first slope")
            return oracle_oex(
                self.std_data, grid, self.beta1_true, self.standardizer, path=self.path
            )
        if method == "OP":
            if self.pi_true is None:
                raise ValueError("The prediction oracle needs the true probabilities")
            return oracle_op(self.std_data, grid, self.pi_true, path=self.path)
        raise UnknownMethodError(f"{method} is not a grid-profile method")

    def fit(self, method: str) -> MethodFit:
        if method == "ML":
            return self._result(method, _settle(lambda: fit_ml(self.std_data)))
        if method == "FC":
            return self._result(method, self.firth)
        if method == "FLIC":
            firth = self.firth
            if not firth.converged:
                return self._result(method, firth)
            return self._result(method, _settle(lambda: flic(self.std_data, firth)))
        if method in ("IP", "WP"):
            lam = self.settings.ip_lambda if method == "IP" else self.settings.wp_lambda
            return self._result(method, self._ridge(lam), lambda_star=lam)
        if method in RCV_QUANTILES:
            selections = self.rcv
            lam = selections.quantile(RCV_QUANTILES[method])
            nearest = int(np.argmin(np.abs(np.log(self.settings.grid.values) - np.log(lam))))
            fit = self._ridge(lam, init=self.path.fits[nearest].beta)
            return self._result(
                method,
                fit,
                lambda_star=lam,
                boundary_hit=self.settings.grid.is_boundary(lam),
                extra=selections.flags,
            )
        if method in TUNED_METHODS:
            return self._from_profile(method, self.profile(method))
        raise UnknownMethodError(f"Unknown method {method!r}")

    def fit_fixed(self, lam: float) -> MethodFit:
        return self._result(FIXED_RIDGE, self._ridge(lam), lambda_star=lam)


def fit_methods(
    data: Dataset,
    methods: Iterable[str],
    settings: FitSettings | None = None,
    *,
    rng: np.random.Generator | None = None,
    beta1_true: float | None = None,
    pi_true: np.ndarray | None = None,
    separated: bool | None = None,
) -> dict[str, MethodFit]:
    methods = check_methods(methods)
    workspace = MethodWorkspace(
        data,
        settings,
        rng=rng,
        beta1_true=beta1_true,
        pi_true=pi_true,
        separated=separated,
    )
    return {method: workspace.fit(method) for method in methods}
