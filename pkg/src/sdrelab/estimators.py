"""State estimators under comparison: SDRE Kalman filter, EKF, particle filter.

Each step function is pure: it consumes an estimator state plus the previous
input and current measurement and returns a new state.  A run owns its
estimator instance and its random stream, so independent runs can execute
concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flags
from .errors import BadCovariance, NonFiniteState
from .models import ModelDef
from .numerics import (
    DEFAULT_CARE_TOL,
    is_symmetric,
    observability_rank,
    rk4_step,
    solve_filter_care,
    symmetrize,
)

_STATE_LIMIT = 1e6
_COLLAPSE_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class NoiseConfig:
    """Process disturbance covariance (intensity) Qd and measurement covariance Rn."""

    qd: np.ndarray
    rn: np.ndarray


@dataclass(frozen=True, eq=False)
class KalmanState:
    """Estimate vector with covariance; `gain` carries the last filter gain so
    a step rejected for observability loss can reuse it.  `events` holds the
    flag bits raised by the most recent step."""

    xhat: np.ndarray
    p: np.ndarray
    gain: np.ndarray | None = None
    events: int = 0


@dataclass(eq=False)
class ParticleSet:
    """Particle stack (N, n) with weights summing to one and an owned RNG."""

    particles: np.ndarray
    weights: np.ndarray
    rng: np.random.Generator
    events: int = 0


def process_noise_cov(noise: NoiseConfig, dt: float) -> np.ndarray:
    """Per-step covariance of the Euler-Maruyama process-noise increment."""
    return np.asarray(noise.qd, dtype=float) * dt


def measurement_noise_cov(noise: NoiseConfig) -> np.ndarray:
    """Per-sample measurement noise covariance."""
    return np.asarray(noise.rn, dtype=float)


def psd_factor(m: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Factor L with L L' = m for a symmetric PSD matrix (eigen square root)."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if not is_symmetric(m, 1e-10):
        raise BadCovariance(f"{name} is not symmetric")
    w, v = np.linalg.eigh(symmetrize(m))
    floor = -1e-10 * (1.0 + float(np.abs(w).max(initial=0.0)))
    if float(w.min(initial=0.0)) < floor:
        raise BadCovariance(f"{name} has negative eigenvalue {w.min():.3e}")
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def sdre_kf_step(
    st: KalmanState,
    u: np.ndarray,
    y: np.ndarray,
    model: ModelDef,
    noise: NoiseConfig,
    dt: float,
    care_tol: float = DEFAULT_CARE_TOL,
) -> KalmanState:
    """One SDRE Kalman filter step.

    The SDC triple is evaluated at the current error estimate; the algebraic
    filter Riccati equation gives P and Kf = P C' Rn^-1; the error estimate
    advances one RK4 step of e' = A e + B u + Kf (y_shift - C e) with
    A, B, C, Kf held constant over the step.  The filter runs in the same
    error coordinates as the controller's factorization, so the measurement
    is shifted by C x_ref before the innovation.

    If the factorization loses observability at the current estimate the
    step keeps the previous gain (zero when none exists yet) and raises the
    observability-loss event bit instead of failing.
    """
    x_ref = model.equilibrium
    e_hat = np.asarray(st.xhat, dtype=float) - x_ref
    sdc = model.sdc_at(e_hat)
    events = 0
    if observability_rank(sdc.a, sdc.c) < model.n_states:
        events |= flags.OBSERVABILITY_LOSS
        kf = st.gain if st.gain is not None else np.zeros(
            (model.n_states, model.n_outputs)
        )
        p = st.p
    else:
        sol = solve_filter_care(
            sdc.a, sdc.c, noise.qd, measurement_noise_cov(noise), care_tol
        )
        kf = sol.gain
        p = sol.p

    y_shift = np.asarray(y, dtype=float) - model.c_matrix @ x_ref
    u = np.asarray(u, dtype=float)
    a, b, c = sdc.a, sdc.b, sdc.c

    def deriv(e):
        return a @ e + b @ u + kf @ (y_shift - c @ e)

    e_next = rk4_step(deriv, e_hat, dt)
    xhat = e_next + x_ref
    if float(np.abs(xhat).max(initial=0.0)) > _STATE_LIMIT:
        raise NonFiniteState("SDRE-KF estimate left the plausibility region")
    return KalmanState(xhat=xhat, p=p, gain=kf, events=events)


def ekf_step(
    st: KalmanState,
    u: np.ndarray,
    y: np.ndarray,
    model: ModelDef,
    noise: NoiseConfig,
    dt: float,
) -> KalmanState:
    """One continuous-time EKF step.

    A is the analytic Jacobian at the estimate; the noise Jacobians are
    identity (additive noise), so the effective covariances equal Qd and Rn.
    The estimate and covariance advance jointly by one RK4 step of
    x' = f(x, u) + K (y - C x),  P' = A P + P A' - K Rn K' + Qd
    with A and K = P C' Rn^-1 frozen across the substages; P is symmetrized
    after the step.
    """
    n = model.n_states
    xhat = np.asarray(st.xhat, dtype=float)
    p = np.asarray(st.p, dtype=float)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    a = model.jacobian_at(xhat, u)
    c = model.c_matrix
    rn = measurement_noise_cov(noise)
    qd = np.asarray(noise.qd, dtype=float)
    k = p @ c.T @ np.linalg.inv(rn)
    krk = k @ rn @ k.T

    def deriv(z):
        x = z[:n]
        pm = z[n:].reshape(n, n)
        dx = model.dynamics(x, u) + k @ (y - c @ x)
        dp = a @ pm + pm @ a.T - krk + qd
        return np.concatenate([dx, dp.ravel()])

    z_next = rk4_step(deriv, np.concatenate([xhat, p.ravel()]), dt)
    x_next = z_next[:n]
    p_next = symmetrize(z_next[n:].reshape(n, n))
    if float(np.abs(x_next).max(initial=0.0)) > _STATE_LIMIT:
        raise NonFiniteState("EKF estimate left the plausibility region")
    return KalmanState(xhat=x_next, p=p_next, gain=k, events=0)


def pf_init(
    x0_mean: np.ndarray,
    p0: np.ndarray,
    n_particles: int,
    rng: np.random.Generator | int,
) -> ParticleSet:
    """Draw N particles from N(x0_mean, P0) with uniform weights."""
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng)))
    mean = np.asarray(x0_mean, dtype=float)
    factor = psd_factor(p0, "P0")
    particles = mean[None, :] + rng.standard_normal((n_particles, mean.size)) @ factor.T
    weights = np.full(n_particles, 1.0 / n_particles)
    return ParticleSet(particles=particles, weights=weights, rng=rng)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn on an equally spaced grid with one uniform offset."""
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0  # guard against rounding in the last bin
    return np.searchsorted(cumulative, positions)


def pf_step(
    ps: ParticleSet,
    u: np.ndarray,
    y: np.ndarray,
    model: ModelDef,
    noise: NoiseConfig,
    dt: float,
) -> tuple[ParticleSet, np.ndarray]:
    """One bootstrap particle filter step; returns the new set and its mean.

    Prediction uses the Euler discretization x+ = x + f(x, u) dt + w with
    w ~ N(0, Qd dt); weights are the Gaussian density of the innovation under
    Rn; systematic resampling restores N equally weighted particles and the
    estimate is their mean.  If every likelihood underflows, uniform weights
    are substituted and the weight-collapse event bit is raised.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = ps.rng
    n_particles = ps.particles.shape[0]

    lw = psd_factor(process_noise_cov(noise, dt), "Qd*dt")
    drift = model.dynamics_batch(ps.particles, u)
    predicted = (
        ps.particles
        + dt * drift
        + rng.standard_normal(ps.particles.shape) @ lw.T
    )

    rn = measurement_noise_cov(noise)
    innovations = y[None, :] - predicted @ model.c_matrix.T
    quad = np.einsum(
        "ij,ij->i", innovations, np.linalg.solve(rn, innovations.T).T
    )
    log_norm = -0.5 * (
        y.size * np.log(2.0 * np.pi) + np.linalg.slogdet(rn)[1]
    )
    likelihood = np.exp(-0.5 * quad + log_norm)

    events = 0
    total = float(likelihood.sum())
    if not np.isfinite(total) or float(likelihood.max(initial=0.0)) < _COLLAPSE_FLOOR:
        events |= flags.WEIGHT_COLLAPSE
        weights = np.full(n_particles, 1.0 / n_particles)
    else:
        weights = likelihood / total

    idx = systematic_resample(weights, rng)
    resampled = predicted[idx]
    uniform = np.full(n_particles, 1.0 / n_particles)
    estimate = resampled.mean(axis=0)
    return (
        ParticleSet(particles=resampled, weights=uniform, rng=rng, events=events),
        estimate,
    )
