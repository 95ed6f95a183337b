"""apid: Bayesian-optimized nonlinear adaptive PID tuning for a planar
mobile-manipulator arm."""

__version__ = "0.1.0"

from .bayesopt import BoTrace, SearchBox, expected_improvement, optimize, propose_next
from .control import (
    ControllerState,
    NonlinearPidParams,
    NoOscillationFound,
    PidGains,
    UnstableProbe,
    ZnProbeConfig,
    control_step,
    kd_of_error,
    kp_of_error,
    pid_control_step,
    ziegler_nichols_tune,
)
from .dynamics import (
    ArmModel,
    BaseMotionProfile,
    BaseSegment,
    ComplianceEllipsoid,
    JointState,
    SimulationDiverged,
    SingularConfiguration,
    base_disturbance_torques,
    compliance_ellipsoid,
    coriolis_matrix,
    gravity_vector,
    jacobian,
    mass_matrix,
    step,
)
from .gp import GpModel, KernelParams, NotPositiveDefinite, add_sample, fit, posterior, se_kernel
from .harness import (
    ControllerAssignment,
    RolloutTrace,
    Scenario,
    StagedTuneResult,
    cost,
    default_scenario,
    rollout,
    staged_tune,
    zn_to_searchbox,
)
