"""Linear-programming check for complete or quasi-complete separation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.optimize import linprog

from .config import SEPARATION_THRESHOLD
from .models import Dataset


class SeparationCheckError(RuntimeError):
    """Raised when the separation linear program cannot be solved."""


@dataclass(frozen=True, eq=False)
class SeparationReport:
    status: Literal["none", "separated"]
    certificate: np.ndarray | None
    objective: float

    @property
    def separated(self) -> bool:
        return self.status == "separated"


def detect_separation(data: Dataset) -> SeparationReport:
    """Maximize Σ s_i x_i·b subject to s_i x_i·b ≥ 0 and |b_j| ≤ 1, with s_i = 2y_i - 1.

    A positive optimum means some direction b orders every event above every non-event.
    """

    rows = data.observed & (data.w > 0)
    signed = (2.0 * data.y[rows] - 1.0)[:, np.newaxis] * data.X[rows]
    if signed.shape[0] == 0:
        return SeparationReport(status="none", certificate=None, objective=0.0)
    result = linprog(
        c=-signed.sum(axis=0),
        A_ub=-signed,
        b_ub=np.zeros(signed.shape[0]),
        bounds=[(-1.0, 1.0)] * data.p,
        method="highs",
    )
    if not result.success:
        raise SeparationCheckError(f"Separation LP failed: {result.message}")
    objective = float(-result.fun)
    if objective > SEPARATION_THRESHOLD:
        return SeparationReport(
            status="separated", certificate=np.asarray(result.x), objective=objective
        )
    return SeparationReport(status="none", certificate=None, objective=objective)
