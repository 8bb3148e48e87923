"""Closed-loop stochastic simulation engine and Monte-Carlo benchmark runner.

Per step: measure, estimate, control, propagate truth.  Truth propagation is
RK4 on the deterministic drift plus an additive Euler-Maruyama noise
increment.  Every run derives its random streams deterministically from
(seed, run_index, stream role), so batches are reproducible and
embarrassingly parallel.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import flags
from .control import ControllerConfig, running_cost, sdre_control
from .errors import (
    CareFailure,
    DivergenceCeiling,
    NonFiniteState,
    ShapeMismatch,
    ValidationError,
)
from .estimators import (
    KalmanState,
    NoiseConfig,
    ekf_step,
    measurement_noise_cov,
    pf_init,
    pf_step,
    process_noise_cov,
    psd_factor,
    sdre_kf_step,
)
from .models import ModelDef, get_model
from .numerics import is_symmetric, rk4_step, symmetrize

ESTIMATOR_KINDS = ("sdre_kf", "ekf", "pf", "none")

_DIVERGENCE_LIMIT = 1e6
_MAX_DIVERGED_FRACTION = 0.10

# Stream roles for the counter-based RNG split (seed, run_index, role).
_ROLE_TRUTH = 0
_ROLE_MEAS = 1
_ROLE_PF = 2


@dataclass(eq=False)
class SimConfig:
    """Full description of one Monte-Carlo experiment."""

    model_name: str
    estimator_kind: str
    dt: float
    horizon: float
    n_runs: int
    seed: int
    noise: NoiseConfig
    controller: ControllerConfig
    pf_particles: int
    x0: np.ndarray
    x0_hat: np.ndarray
    p0: np.ndarray
    noise_scale: float = 1.0
    open_loop_check: bool = False

    def validate(self, model: ModelDef | None = None) -> None:
        if self.estimator_kind not in ESTIMATOR_KINDS:
            raise ValidationError(
                f"estimator '{self.estimator_kind}' not one of {ESTIMATOR_KINDS}"
            )
        if not self.dt > 0.0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.horizon < self.dt:
            raise ValidationError(
                f"horizon {self.horizon} must be at least dt {self.dt}"
            )
        if self.n_runs < 1:
            raise ValidationError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.estimator_kind == "pf" and self.pf_particles < 1:
            raise ValidationError(
                f"pf_particles must be >= 1, got {self.pf_particles}"
            )
        if self.noise_scale < 0.0:
            raise ValidationError(f"noise_scale must be >= 0, got {self.noise_scale}")
        model = model or get_model(self.model_name)
        n, m, p = model.n_states, model.n_inputs, model.n_outputs
        if np.asarray(self.x0, dtype=float).shape != (n,):
            raise ValidationError(f"x0 must have shape ({n},)")
        if np.asarray(self.x0_hat, dtype=float).shape != (n,):
            raise ValidationError(f"x0_hat must have shape ({n},)")
        if np.asarray(self.p0, dtype=float).shape != (n, n):
            raise ValidationError(f"P0 must have shape ({n}, {n})")
        if np.asarray(self.noise.qd, dtype=float).shape != (n, n):
            raise ValidationError(f"noise.Qd must have shape ({n}, {n})")
        if np.asarray(self.noise.rn, dtype=float).shape != (p, p):
            raise ValidationError(f"noise.Rn must have shape ({p}, {p})")
        if np.asarray(self.controller.qw, dtype=float).shape != (n, n):
            raise ValidationError(f"controller.Qw must have shape ({n}, {n})")
        if np.asarray(self.controller.rw, dtype=float).shape != (m, m):
            raise ValidationError(f"controller.Rw must have shape ({m}, {m})")
        psd_factor(self.noise.qd, "noise.Qd")
        if float(np.linalg.eigvalsh(symmetrize(
                np.atleast_2d(np.asarray(self.noise.rn, float)))).min()) < 1e-12:
            raise ValidationError("noise.Rn must be positive definite")
        psd_factor(self.p0, "P0")


@dataclass(eq=False)
class RunResult:
    """Time-indexed trajectories of one seeded closed-loop run."""

    run_index: int
    estimator_kind: str
    times: np.ndarray
    x_true: np.ndarray
    x_hat: np.ndarray
    u: np.ndarray
    y: np.ndarray
    flags: np.ndarray
    accumulated_cost: float
    diverged: bool


@dataclass(eq=False)
class BatchMetrics:
    """Per-state MSE/MAE pooled over a batch plus the per-run breakdown."""

    estimator_kind: str
    n_runs: int
    mse: np.ndarray
    mae: np.ndarray
    per_run_mse: np.ndarray
    per_run_mae: np.ndarray
    excluded_runs: tuple[int, ...] = field(default_factory=tuple)


def _stream(seed: int, run_index: int, role: int) -> np.random.Generator:
    root = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([root, int(run_index), role]))
    )


def run_closed_loop(cfg: SimConfig, run_index: int, on_step=None) -> RunResult:
    """Simulate one seeded run of the measure/estimate/control/propagate loop.

    Loop order per step k: (1) y_k = C x_true + v; (2) the estimator consumes
    (u_{k-1}, y_k) giving x_hat_k (the initial estimate is reported at k = 0);
    (3) the controller acts on x_hat_k (on x_true when estimator_kind is
    'none' or in open-loop check mode); (4) truth advances one RK4 step of
    the drift under the held input, then adds w ~ N(0, Qd dt).

    `on_step(k, estimator_state)` is an optional hook used by the self-test
    suite to inspect covariances and particle weights every step.
    """
    model = get_model(cfg.model_name)
    cfg.validate(model)
    n, m, p = model.n_states, model.n_inputs, model.n_outputs
    dt = cfg.dt
    n_steps = int(round(cfg.horizon / dt))
    times = np.arange(n_steps + 1) * dt

    truth_rng = _stream(cfg.seed, run_index, _ROLE_TRUTH)
    meas_rng = _stream(cfg.seed, run_index, _ROLE_MEAS)
    pf_rng = _stream(cfg.seed, run_index, _ROLE_PF)

    scale = np.sqrt(cfg.noise_scale)
    lw = psd_factor(process_noise_cov(cfg.noise, dt), "noise.Qd") * scale
    lv = psd_factor(measurement_noise_cov(cfg.noise), "noise.Rn") * scale

    x_true = np.full((n_steps + 1, n), np.nan)
    x_hat = np.full((n_steps + 1, n), np.nan)
    u_hist = np.full((n_steps + 1, m), np.nan)
    y_hist = np.full((n_steps + 1, p), np.nan)
    step_flags = np.zeros(n_steps + 1, dtype=np.uint8)
    cost_terms = np.zeros(n_steps + 1)

    x_true[0] = np.asarray(cfg.x0, dtype=float)
    kind = cfg.estimator_kind
    kstate = KalmanState(xhat=np.asarray(cfg.x0_hat, float),
                         p=np.asarray(cfg.p0, float))
    pset = (
        pf_init(cfg.x0_hat, cfg.p0, cfg.pf_particles, pf_rng)
        if kind == "pf"
        else None
    )

    diverged = False
    last_k = n_steps
    u_prev = np.zeros(m)
    for k in range(n_steps + 1):
        y_hist[k] = model.c_matrix @ x_true[k] + lv @ meas_rng.standard_normal(p)

        try:
            if kind == "none":
                x_hat[k] = x_true[k]
            elif k == 0:
                x_hat[0] = np.asarray(cfg.x0_hat, dtype=float)
            elif kind == "sdre_kf":
                kstate = sdre_kf_step(
                    kstate, u_prev, y_hist[k], model, cfg.noise, dt,
                    cfg.controller.care_tol,
                )
                x_hat[k] = kstate.xhat
                step_flags[k] |= kstate.events
            elif kind == "ekf":
                kstate = ekf_step(kstate, u_prev, y_hist[k], model, cfg.noise, dt)
                x_hat[k] = kstate.xhat
            else:
                pset, x_hat[k] = pf_step(
                    pset, u_prev, y_hist[k], model, cfg.noise, dt
                )
                step_flags[k] |= pset.events

            if on_step is not None:
                on_step(k, pset if kind == "pf" else kstate)

            control_state = (
                x_true[k] if (kind == "none" or cfg.open_loop_check) else x_hat[k]
            )
            out = sdre_control(control_state, model.equilibrium, model, cfg.controller)
        except (CareFailure, NonFiniteState):
            diverged = True
            step_flags[k] |= flags.DIVERGED
            last_k = k - 1
            break

        u_hist[k] = out.u
        if not out.controllable:
            step_flags[k] |= flags.CONTROLLABILITY_LOSS
        cost_terms[k] = running_cost(
            x_true[k] - model.equilibrium, u_hist[k], cfg.controller
        )

        if k < n_steps:
            u_held = u_hist[k]
            drift = rk4_step(lambda s: model.dynamics(s, u_held), x_true[k], dt)
            x_true[k + 1] = drift + lw @ truth_rng.standard_normal(n)
            if float(np.abs(x_true[k + 1]).max()) > _DIVERGENCE_LIMIT:
                diverged = True
                step_flags[k + 1] |= flags.DIVERGED
                last_k = k
                break
        u_prev = u_hist[k]

    cost = float(np.trapz(cost_terms[: last_k + 1], times[: last_k + 1]))
    return RunResult(
        run_index=run_index,
        estimator_kind=kind,
        times=times,
        x_true=x_true,
        x_hat=x_hat,
        u=u_hist,
        y=y_hist,
        flags=step_flags,
        accumulated_cost=cost,
        diverged=diverged,
    )


def compute_metrics(runs: list[RunResult]) -> BatchMetrics:
    """Pool squared/absolute estimate errors per state over runs and steps."""
    if not runs:
        raise ShapeMismatch("no runs to aggregate")
    n = runs[0].x_true.shape[1]
    length = runs[0].x_true.shape[0]
    for r in runs:
        if r.x_true.shape != (length, n) or r.x_hat.shape != (length, n):
            raise ShapeMismatch(
                f"run {r.run_index} has shape {r.x_true.shape}, expected {(length, n)}"
            )
    err = np.stack([r.x_true - r.x_hat for r in runs])  # (runs, steps, n)
    per_run_mse = np.mean(err**2, axis=1)
    per_run_mae = np.mean(np.abs(err), axis=1)
    mse = err.reshape(-1, n) ** 2
    mae = np.abs(err.reshape(-1, n))
    return BatchMetrics(
        estimator_kind=runs[0].estimator_kind,
        n_runs=len(runs),
        mse=mse.mean(axis=0),
        mae=mae.mean(axis=0),
        per_run_mse=per_run_mse,
        per_run_mae=per_run_mae,
    )


def _run_one(payload):
    cfg, idx = payload
    return run_closed_loop(cfg, idx)


def run_batch(cfg: SimConfig, workers: int = 1) -> list[RunResult]:
    """Execute the n_runs independent seeded runs, optionally in parallel.

    Results are ordered by run index, so the aggregation is identical for any
    worker count.
    """
    cfg.validate()
    payloads = [(cfg, i) for i in range(cfg.n_runs)]
    if workers <= 1:
        return [run_closed_loop(cfg, i) for i in range(cfg.n_runs)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, payloads))


def monte_carlo(cfg: SimConfig, workers: int = 1) -> BatchMetrics:
    """Run the batch and aggregate; diverged runs are excluded with a flag.

    Raises DivergenceCeiling when more than 10% of the runs diverge.
    """
    runs = run_batch(cfg, workers)
    good = [r for r in runs if not r.diverged]
    bad = tuple(r.run_index for r in runs if r.diverged)
    if len(bad) > _MAX_DIVERGED_FRACTION * cfg.n_runs:
        raise DivergenceCeiling(
            f"{len(bad)} of {cfg.n_runs} runs diverged (indices {bad})"
        )
    metrics = compute_metrics(good)
    metrics.excluded_runs = bad
    return metrics


def make_config(model_name: str, **overrides) -> SimConfig:
    """Convenience constructor with per-model defaults (weights, targets)."""
    model = get_model(model_name)
    n, m = model.n_states, model.n_inputs
    base = dict(
        model_name=model_name,
        estimator_kind="sdre_kf",
        dt=0.01,
        horizon=10.0,
        n_runs=30,
        seed=0,
        noise=NoiseConfig(qd=0.01 * np.eye(n), rn=0.01 * np.eye(model.n_outputs)),
        controller=ControllerConfig(qw=np.eye(n), rw=0.1 * np.eye(m)),
        pf_particles=500,
        x0=model.initial_state.copy(),
        x0_hat=model.initial_state.copy(),
        p0=0.1 * np.eye(n),
    )
    base.update(overrides)
    return SimConfig(**base)


def config_with(cfg: SimConfig, **overrides) -> SimConfig:
    """Functional update of a SimConfig."""
    return replace(cfg, **overrides)
