"""SDRE state feedback: pointwise SDC evaluation, rank check, CARE solve, gain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelDef
from .numerics import (
    DEFAULT_CARE_TOL,
    DEFAULT_RANK_TOL,
    CareProblem,
    controllability_rank,
    solve_care,
)


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    """Constant state/input weights and solver tolerances."""

    qw: np.ndarray
    rw: np.ndarray
    care_tol: float = DEFAULT_CARE_TOL
    rank_tol: float = DEFAULT_RANK_TOL


@dataclass(frozen=True, eq=False)
class ControlOutput:
    """u = -gain @ e for the error state e; P is the pointwise CARE solution.

    When the factorization is uncontrollable at this state the fallback is
    u = 0 with a zero gain, P = None and controllable = False; at such states
    the input matrix is (numerically) zero, so zero input is lossless.
    """

    u: np.ndarray
    gain: np.ndarray
    p: np.ndarray | None
    controllable: bool


def sdre_control(
    x: np.ndarray, x_ref: np.ndarray, model: ModelDef, cfg: ControllerConfig
) -> ControlOutput:
    """Pointwise Riccati feedback u = -R^-1 B'(e) P(e) e at e = x - x_ref.

    The CARE is re-solved at every call; no gain is cached between states.
    Raises CareFailure subclasses when the pointwise solve fails.
    """
    e = np.asarray(x, dtype=float) - np.asarray(x_ref, dtype=float)
    sdc = model.sdc_at(e)
    if controllability_rank(sdc.a, sdc.b, cfg.rank_tol) < model.n_states:
        return ControlOutput(
            u=np.zeros(model.n_inputs),
            gain=np.zeros((model.n_inputs, model.n_states)),
            p=None,
            controllable=False,
        )
    sol = solve_care(CareProblem(sdc.a, sdc.b, cfg.qw, cfg.rw), cfg.care_tol)
    return ControlOutput(u=-(sol.gain @ e), gain=sol.gain, p=sol.p, controllable=True)


def running_cost(e: np.ndarray, u: np.ndarray, cfg: ControllerConfig) -> float:
    """Quadratic integrand 0.5 (e'Qw e + u'Rw u)."""
    e = np.asarray(e, dtype=float)
    u = np.asarray(u, dtype=float)
    return 0.5 * float(e @ cfg.qw @ e + u @ cfg.rw @ u)
