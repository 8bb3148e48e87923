"""SDRE control and estimation benchmark kit.

Pointwise Riccati feedback paired with an SDRE-based Kalman filter, with EKF
and particle-filter baselines, plus a seeded closed-loop Monte-Carlo harness
for the inverted-pendulum and Van der Pol benchmark plants.
"""

__version__ = "0.1.0"

from .control import ControllerConfig, ControlOutput, running_cost, sdre_control
from .errors import (
    AlphaOutOfRange,
    BadCovariance,
    BadWeights,
    CareFailure,
    DivergenceCeiling,
    NonFiniteDerivative,
    NonFiniteState,
    NotHurwitz,
    NotStabilizable,
    ParseError,
    SdreLabError,
    ShapeMismatch,
    SingularSubspace,
    ValidationError,
)
from .estimators import (
    KalmanState,
    NoiseConfig,
    ParticleSet,
    ekf_step,
    pf_init,
    pf_step,
    sdre_kf_step,
    systematic_resample,
)
from .models import (
    ModelDef,
    PendulumParams,
    SdcMatrices,
    VdpParams,
    blend_sdc,
    get_model,
    make_pendulum,
    make_vdp,
    model_names,
    pendulum_dynamics,
    pendulum_jacobian,
    pendulum_sdc,
    register_model,
    sinc_stable,
    vdp_dynamics,
    vdp_jacobian,
    vdp_sdc,
)
from .numerics import (
    CareProblem,
    CareSolution,
    care_residual,
    controllability_rank,
    jacobian_fd,
    observability_rank,
    rk4_step,
    solve_care,
    solve_filter_care,
    solve_lyapunov,
)
from .sim import (
    BatchMetrics,
    RunResult,
    SimConfig,
    compute_metrics,
    config_with,
    make_config,
    monte_carlo,
    run_batch,
    run_closed_loop,
)
