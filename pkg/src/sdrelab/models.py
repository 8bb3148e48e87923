"""Benchmark plant definitions: inverted pendulum and Van der Pol oscillator.

Both plants are two-state, single-input, with the first state measured
(C = [1, 0]).  The pendulum is regulated about the upright point [pi, 0],
so its linear-like factorization is written in error coordinates
e = x - [pi, 0] using sin(e1 + pi) = -sin(e1); the Van der Pol target is
the origin, so error and absolute coordinates coincide.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AlphaOutOfRange, ValidationError


@dataclass(frozen=True)
class PendulumParams:
    """Rod length l [m], bob mass m [kg], friction k, gravity g [m/s^2]."""

    l: float = 1.5
    m: float = 0.5
    k: float = 0.5
    g: float = 9.81


@dataclass(frozen=True)
class VdpParams:
    mu: float = 0.7


@dataclass(frozen=True, eq=False)
class SdcMatrices:
    """State-dependent coefficient triple evaluated at one state."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


@dataclass(frozen=True, eq=False)
class ModelDef:
    """A registered plant: true dynamics, SDC factorization, Jacobian, targets.

    `dynamics` maps (state, input vector) to the state derivative,
    `dynamics_batch` the same over a (N, n) stack of states (used by the
    particle filter), `sdc_at` evaluates the factorization at an error state,
    and `jacobian_at` is the analytic df/dx at an absolute state.
    """

    name: str
    n_states: int
    n_inputs: int
    n_outputs: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dynamics_batch: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sdc_at: Callable[[np.ndarray], SdcMatrices]
    jacobian_at: Callable[[np.ndarray, np.ndarray], np.ndarray]
    equilibrium: np.ndarray
    initial_state: np.ndarray
    c_matrix: np.ndarray
    state_names: tuple[str, ...]
    u_eq: np.ndarray


def sinc_stable(z: float) -> float:
    """sin(z)/z with the removable singularity handled by a Taylor series."""
    z = float(z)
    if abs(z) >= 1e-4:
        return np.sin(z) / z
    z2 = z * z
    return 1.0 - z2 / 6.0 + z2 * z2 / 120.0


def pendulum_dynamics(x, torque: float, p: PendulumParams) -> np.ndarray:
    """[theta_dot, -(g/l) sin(theta) - (k/m) theta_dot + T/(m l^2)]."""
    x = np.asarray(x, dtype=float)
    acc = (
        -(p.g / p.l) * np.sin(x[0])
        - (p.k / p.m) * x[1]
        + torque / (p.m * p.l * p.l)
    )
    return np.array([x[1], acc])


def pendulum_sdc(e, p: PendulumParams) -> SdcMatrices:
    """Factorization of the error dynamics about the upright point.

    sin(e1 + pi) = -sin(e1) makes the (2,1) entry +(g/l) sin(e1)/e1, so
    A(e) e + B T reproduces the shifted dynamics exactly.
    """
    e = np.asarray(e, dtype=float)
    a = np.array(
        [
            [0.0, 1.0],
            [(p.g / p.l) * sinc_stable(e[0]), -(p.k / p.m)],
        ]
    )
    b = np.array([[0.0], [1.0 / (p.m * p.l * p.l)]])
    c = np.array([[1.0, 0.0]])
    return SdcMatrices(a=a, b=b, c=c)


def pendulum_jacobian(x, torque: float, p: PendulumParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array(
        [
            [0.0, 1.0],
            [-(p.g / p.l) * np.cos(x[0]), -(p.k / p.m)],
        ]
    )


def vdp_dynamics(x, u: float, p: VdpParams) -> np.ndarray:
    """[x2, -x1 - mu (1 - x1^2) x2 + x1 u]."""
    x = np.asarray(x, dtype=float)
    return np.array(
        [x[1], -x[0] - p.mu * (1.0 - x[0] * x[0]) * x[1] + x[0] * u]
    )


def vdp_sdc(x, p: VdpParams) -> SdcMatrices:
    x = np.asarray(x, dtype=float)
    a = np.array(
        [
            [0.0, 1.0],
            [-1.0, -p.mu * (1.0 - x[0] * x[0])],
        ]
    )
    b = np.array([[0.0], [x[0]]])
    c = np.array([[1.0, 0.0]])
    return SdcMatrices(a=a, b=b, c=c)


def vdp_jacobian(x, u: float, p: VdpParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array(
        [
            [0.0, 1.0],
            [-1.0 + 2.0 * p.mu * x[0] * x[1] + u, -p.mu * (1.0 - x[0] * x[0])],
        ]
    )


def blend_sdc(a1: np.ndarray, a2: np.ndarray, alpha: float) -> np.ndarray:
    """Convex combination alpha*A1 + (1-alpha)*A2 of two factorizations."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha={alpha} outside [0, 1]")
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    if a1.shape != a2.shape:
        raise ValueError(f"shape mismatch {a1.shape} vs {a2.shape}")
    return alpha * a1 + (1.0 - alpha) * a2


def make_pendulum(params: PendulumParams | None = None) -> ModelDef:
    p = params or PendulumParams()
    b_gain = 1.0 / (p.m * p.l * p.l)

    def dyn(x, u):
        return pendulum_dynamics(x, float(u[0]), p)

    def dyn_batch(xs, u):
        torque = float(u[0])
        out = np.empty_like(xs)
        out[:, 0] = xs[:, 1]
        out[:, 1] = (
            -(p.g / p.l) * np.sin(xs[:, 0])
            - (p.k / p.m) * xs[:, 1]
            + torque * b_gain
        )
        return out

    return ModelDef(
        name="pendulum",
        n_states=2,
        n_inputs=1,
        n_outputs=1,
        dynamics=dyn,
        dynamics_batch=dyn_batch,
        sdc_at=lambda e: pendulum_sdc(e, p),
        jacobian_at=lambda x, u: pendulum_jacobian(x, float(u[0]), p),
        equilibrium=np.array([np.pi, 0.0]),
        initial_state=np.array([np.pi + 0.5, 0.0]),
        c_matrix=np.array([[1.0, 0.0]]),
        state_names=("theta", "theta_dot"),
        u_eq=np.zeros(1),
    )


def make_vdp(params: VdpParams | None = None) -> ModelDef:
    p = params or VdpParams()

    def dyn(x, u):
        return vdp_dynamics(x, float(u[0]), p)

    def dyn_batch(xs, u):
        ui = float(u[0])
        out = np.empty_like(xs)
        out[:, 0] = xs[:, 1]
        out[:, 1] = (
            -xs[:, 0]
            - p.mu * (1.0 - xs[:, 0] * xs[:, 0]) * xs[:, 1]
            + xs[:, 0] * ui
        )
        return out

    return ModelDef(
        name="vdp",
        n_states=2,
        n_inputs=1,
        n_outputs=1,
        dynamics=dyn,
        dynamics_batch=dyn_batch,
        sdc_at=lambda e: vdp_sdc(e, p),
        jacobian_at=lambda x, u: vdp_jacobian(x, float(u[0]), p),
        equilibrium=np.zeros(2),
        initial_state=np.array([1.0, 1.0]),
        c_matrix=np.array([[1.0, 0.0]]),
        state_names=("x1", "x2"),
        u_eq=np.zeros(1),
    )


_BUILDERS: dict[str, Callable[[], ModelDef]] = {
    "pendulum": make_pendulum,
    "vdp": make_vdp,
}
_CUSTOM: dict[str, ModelDef] = {}


def get_model(name: str) -> ModelDef:
    if name in _CUSTOM:
        return _CUSTOM[name]
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise ValidationError(
            f"unknown model '{name}' (known: {sorted(set(_BUILDERS) | set(_CUSTOM))})"
        ) from None


def register_model(model: ModelDef) -> None:
    """Register a custom model for name-based lookup (current process only)."""
    _CUSTOM[model.name] = model


def model_names() -> list[str]:
    return sorted(set(_BUILDERS) | set(_CUSTOM))
