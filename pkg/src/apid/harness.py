"""Closed-loop scenarios, rollouts, the tracking/effort cost, and the staged
per-joint tuning campaign.

A scenario couples the arm model with a base maneuver and per-joint setpoint
schedules.  ``rollout`` runs the sampled control loop at 1/dt (controllers
compute torques from the current angles, torques are clamped to the limit,
the arm integrates one RK4 step) and records everything needed for scoring
and plotting.  ``staged_tune`` reproduces the tuning pipeline: every joint
gets a Ziegler-Nichols PID first, then joints are upgraded one at a time,
base to tip, each via a Bayesian-optimization campaign over its adaptive-gain
parameters while the others keep their current controllers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import bayesopt
from ._fmt import csv_line
from .bayesopt import BoTrace, SearchBox
from .control import (
    NonlinearPidParams,
    PidGains,
    ZnProbeConfig,
    _pid_step_core,
    ziegler_nichols_tune,
)
from .dynamics import (
    DIVERGENCE_LIMIT,
    ArmModel,
    BaseMotionProfile,
    BaseSegment,
    JointState,
    SimulationDiverged,
    _rk4_arm_step,
)


@dataclass(frozen=True)
class Scenario:
    """Arm + base maneuver + joint setpoint schedules over a fixed horizon."""

    arm: ArmModel
    base: BaseMotionProfile
    joint_references: tuple[tuple[tuple[float, float], ...], ...]
    duration: float = 25.0
    dt: float = 1e-3
    initial_state: JointState | None = None

    def __post_init__(self):
        if not self.duration > 0 or not self.dt > 0:
            raise ValueError("duration and dt must be positive")
        if len(self.joint_references) != self.arm.n_links:
            raise ValueError("need one reference schedule per joint")
        refs = tuple(
            tuple((float(t), float(v)) for t, v in sched)
            for sched in self.joint_references
        )
        for sched in refs:
            times = [t for t, _ in sched]
            if any(t < 0 or t > self.duration for t in times):
                raise ValueError("reference times must lie within [0, duration]")
            if sorted(times) != times:
                raise ValueError("reference times must be sorted")
        if self.base.horizon < self.duration - 1e-9:
            raise ValueError("base profile horizon shorter than scenario duration")
        state = self.initial_state or JointState(
            q=np.zeros(self.arm.n_links), qdot=np.zeros(self.arm.n_links))
        if state.q.shape[0] != self.arm.n_links:
            raise ValueError("initial state dimension mismatch")
        object.__setattr__(self, "joint_references", refs)
        object.__setattr__(self, "initial_state", state)

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.duration / self.dt - 1e-9))

    def reference_arrays(self):
        off = np.zeros(self.arm.n_links + 1, dtype=np.int64)
        times = []
        vals = []
        for j, sched in enumerate(self.joint_references):
            off[j + 1] = off[j] + len(sched)
            times.extend(t for t, _ in sched)
            vals.extend(v for _, v in sched)
        return off, np.asarray(times, dtype=float), np.asarray(vals, dtype=float)


Controller = PidGains | NonlinearPidParams


@dataclass(frozen=True)
class ControllerAssignment:
    """One controller per joint: constant-gain PID or adaptive PID."""

    controllers: tuple[Controller, ...]

    def __post_init__(self):
        object.__setattr__(self, "controllers", tuple(self.controllers))
        for c in self.controllers:
            if not isinstance(c, (PidGains, NonlinearPidParams)):
                raise TypeError(f"unsupported controller {type(c).__name__}")

    def replaced(self, joint_index: int, controller: Controller) -> "ControllerAssignment":
        cs = list(self.controllers)
        cs[joint_index] = controller
        return ControllerAssignment(tuple(cs))

    def params_matrix(self) -> np.ndarray:
        """(n, 6) rows kp_min, kp_max, tau_p, kd_max, tau_d, ki.

        Constant-gain PIDs are encoded as collapsed adaptive controllers,
        which is exact: the gain laws reduce to the constants.
        """
        rows = []
        for c in self.controllers:
            if isinstance(c, PidGains):
                rows.append([c.kp, c.kp, 0.0, c.kd, 0.0, c.ki])
            else:
                rows.append([c.kp_min, c.kp_max, c.tau_p, c.kd_max, c.tau_d, c.ki])
        return np.asarray(rows, dtype=float)


@dataclass(frozen=True)
class RolloutTrace:
    """Per-step record of the closed loop (angles, setpoints, clamped torques,
    gains actually used)."""

    t: np.ndarray
    theta: np.ndarray
    theta_ref: np.ndarray
    u: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    dt: float

    @property
    def n_joints(self) -> int:
        return self.theta.shape[1]

    def joint_costs(self, p: float = 1.0, q: float = 0.5,
                    decimate_to: int | None = None) -> np.ndarray:
        return np.array([cost(self, j, p=p, q=q, decimate_to=decimate_to)
                         for j in range(self.n_joints)])


@njit(cache=True, nogil=True)
def _rollout_kernel(lengths, masses, payload, fric, grav, tlimit,
                    bt0, bax, bay, baw, bom, bpsi,
                    q0, qd0, ref_off, ref_t, ref_v, cp, dt, n_steps):
    n = lengths.shape[0]
    theta = np.empty((n_steps, n))
    ref = np.empty((n_steps, n))
    u_rec = np.empty((n_steps, n))
    kp_rec = np.empty((n_steps, n))
    kd_rec = np.empty((n_steps, n))
    integ = np.zeros(n)
    filt = np.zeros(n)
    perr = np.zeros(n)
    ptr = np.full(n, -1, dtype=np.int64)
    q = q0.copy()
    qd = qd0.copy()
    u_vec = np.empty(n)
    div_t = -1.0
    for k in range(n_steps):
        t = k * dt
        for j in range(n):
            cnt = ref_off[j + 1] - ref_off[j]
            while ptr[j] + 1 < cnt and ref_t[ref_off[j] + ptr[j] + 1] <= t + 1e-9:
                ptr[j] += 1
            rv = q0[j] if ptr[j] < 0 else ref_v[ref_off[j] + ptr[j]]
            e = rv - q[j]
            u, i2, f2, kpv, kdv = _pid_step_core(
                cp[j, 0], cp[j, 1], cp[j, 2], cp[j, 3], cp[j, 4], cp[j, 5],
                integ[j], filt[j], perr[j], e, dt, tlimit)
            integ[j] = i2
            filt[j] = f2
            perr[j] = e
            if u > tlimit:
                u = tlimit
            elif u < -tlimit:
                u = -tlimit
            theta[k, j] = q[j]
            ref[k, j] = rv
            u_rec[k, j] = u
            kp_rec[k, j] = kpv
            kd_rec[k, j] = kdv
            u_vec[j] = u
        q, qd = _rk4_arm_step(lengths, masses, payload, fric, grav,
                              bt0, bax, bay, baw, bom, bpsi,
                              q, qd, u_vec, t, dt)
        bad = False
        for j in range(n):
            if (not np.isfinite(q[j])) or (not np.isfinite(qd[j])) or \
                    abs(q[j]) > DIVERGENCE_LIMIT or abs(qd[j]) > DIVERGENCE_LIMIT:
                bad = True
        if bad:
            div_t = t + dt
            break
    return theta, ref, u_rec, kp_rec, kd_rec, div_t


def rollout(scenario: Scenario, assignment: ControllerAssignment) -> RolloutTrace:
    """Deterministic closed-loop simulation of the scenario.

    Raises SimulationDiverged if the state leaves the trusted range.
    """
    arm = scenario.arm
    if len(assignment.controllers) != arm.n_links:
        raise ValueError("assignment must cover every joint")
    bt0, bax, bay, baw, bom, bpsi = scenario.base.as_arrays()
    ref_off, ref_t, ref_v = scenario.reference_arrays()
    cp = assignment.params_matrix()
    n_steps = scenario.n_steps
    theta, ref, u_rec, kp_rec, kd_rec, div_t = _rollout_kernel(
        arm.link_lengths, arm.link_masses, arm.payload_mass,
        arm.joint_viscous_friction, arm.gravity, arm.torque_limit,
        bt0, bax, bay, baw, bom, bpsi,
        scenario.initial_state.q, scenario.initial_state.qdot,
        ref_off, ref_t, ref_v, cp, scenario.dt, n_steps)
    if div_t >= 0:
        raise SimulationDiverged(div_t)
    t = np.arange(n_steps) * scenario.dt
    return RolloutTrace(t=t, theta=theta, theta_ref=ref, u=u_rec,
                        kp=kp_rec, kd=kd_rec, dt=scenario.dt)


def cost(trace: RolloutTrace, joint_index: int, p: float = 1.0, q: float = 0.5,
         decimate_to: int | None = None) -> float:
    """Quadratic tracking-error plus control-effort score for one joint.

    Sums p*err^2 + q*u^2 over every recorded step by default; decimate_to
    subsamples the trace to that many evenly spaced steps instead.
    """
    if not 0 <= joint_index < trace.n_joints:
        raise ValueError("joint_index out of range")
    err = trace.theta[:, joint_index] - trace.theta_ref[:, joint_index]
    eff = trace.u[:, joint_index]
    if decimate_to is not None:
        if decimate_to < 1:
            raise ValueError("decimate_to must be positive")
        idx = np.round(np.linspace(0, len(err) - 1, decimate_to)).astype(int)
        err = err[idx]
        eff = eff[idx]
    return float(p * np.sum(err ** 2) + q * np.sum(eff ** 2))


def write_rollout_csv(trace: RolloutTrace, path) -> None:
    """Long-format trace CSV; joint column is 1-based, base to tip."""
    with open(path, "w") as fh:
        fh.write("t,joint,theta,theta_ref,u,kp,kd\n")
        for k in range(trace.t.shape[0]):
            for j in range(trace.n_joints):
                fh.write(csv_line([
                    float(trace.t[k]), j + 1, float(trace.theta[k, j]),
                    float(trace.theta_ref[k, j]), float(trace.u[k, j]),
                    float(trace.kp[k, j]), float(trace.kd[k, j])]))


# ---------------------------------------------------------------------------
# search box construction and the staged campaign
# ---------------------------------------------------------------------------

SEARCH_DIM_NAMES = ("kp_min", "kp_ratio", "tau_p", "kd_max", "tau_d")


def zn_to_searchbox(gains: PidGains) -> SearchBox:
    """Adaptive-parameter search box centered on tuned PID gains.

    The second coordinate is the ratio kp_max/kp_min, so every box point
    satisfies kp_min <= kp_max by construction.
    """
    if gains.kp <= 0 or gains.ki <= 0 or gains.kd <= 0:
        raise ValueError("need strictly positive tuned gains to build a box")
    lower = np.array([0.2 * gains.kp, 1.0, 0.5, 0.5 * gains.kd, 0.5])
    upper = np.array([1.0 * gains.kp, 3.0, 20.0, 5.0 * gains.kd, 50.0])
    return SearchBox(names=SEARCH_DIM_NAMES, lower=lower, upper=upper)


def params_from_point(x, ki: float) -> NonlinearPidParams:
    """Decode a search-box point (kp_min, ratio, tau_p, kd_max, tau_d)."""
    x = np.asarray(x, dtype=float)
    return NonlinearPidParams(kp_min=float(x[0]), kp_max=float(x[0] * x[1]),
                              tau_p=float(x[2]), kd_max=float(x[3]),
                              tau_d=float(x[4]), ki=float(ki))


DEFAULT_KI_SCALE = 0.5


@dataclass(frozen=True)
class StagedTuneResult:
    zn_gains: tuple[PidGains, ...]
    baseline_assignment: ControllerAssignment
    baseline_costs: np.ndarray
    assignment: ControllerAssignment
    traces: tuple[BoTrace, ...]
    tuned_costs: np.ndarray


def staged_tune(scenario: Scenario, seed: int = 42, budget_per_joint: int = 20,
                n_init: int = 5, probe_config: ZnProbeConfig | None = None,
                ki_scale: float = DEFAULT_KI_SCALE, p: float = 1.0,
                q: float = 0.5, decimate_to: int | None = None) -> StagedTuneResult:
    """Bootstrap with Ziegler-Nichols, then upgrade joints base to tip.

    Each joint's campaign minimizes that joint's own rollout cost under the
    assignment frozen so far; the best parameters seen are locked in before
    moving outward.  Fully deterministic given the seed.
    """
    if budget_per_joint < n_init + 1:
        raise ValueError("budget_per_joint must exceed the initial design size")
    arm = scenario.arm
    cfg = probe_config or ZnProbeConfig(dt=scenario.dt)
    q_probe = scenario.initial_state.q
    zn = tuple(ziegler_nichols_tune(arm, j, cfg, q_frozen=q_probe)
               for j in range(arm.n_links))
    baseline = ControllerAssignment(zn)
    baseline_costs = rollout(scenario, baseline).joint_costs(
        p=p, q=q, decimate_to=decimate_to)

    current = baseline
    traces = []
    for j in range(arm.n_links):
        box = zn_to_searchbox(zn[j])
        ki_j = ki_scale * zn[j].ki
        frozen = current

        def objective(x, _j=j, _ki=ki_j, _frozen=frozen):
            asg = _frozen.replaced(_j, params_from_point(x, _ki))
            tr = rollout(scenario, asg)
            return cost(tr, _j, p=p, q=q, decimate_to=decimate_to)

        trace = bayesopt.optimize(objective, box, budget=budget_per_joint,
                                  n_init=n_init, seed=seed + j)
        traces.append(trace)
        current = current.replaced(j, params_from_point(trace.best.params, ki_j))

    tuned_costs = rollout(scenario, current).joint_costs(
        p=p, q=q, decimate_to=decimate_to)
    return StagedTuneResult(zn_gains=zn, baseline_assignment=baseline,
                            baseline_costs=baseline_costs, assignment=current,
                            traces=tuple(traces), tuned_costs=tuned_costs)


# ---------------------------------------------------------------------------
# stock scenarios
# ---------------------------------------------------------------------------


def default_arm() -> ArmModel:
    """Desk-scale three-link arm with a heavy tool payload, working in a
    horizontal plane (the base's yaw plane), so base maneuvers and joint
    transients are the dominant load."""
    return ArmModel(
        link_lengths=np.array([0.25, 0.18, 0.12]),
        link_masses=np.array([2.5, 1.8, 1.0]),
        payload_mass=3.5,
        joint_viscous_friction=0.5,
        joint_stiffness=100.0,
        gravity=0.0,
        torque_limit=150.0,
    )


def default_base_profile() -> BaseMotionProfile:
    """Exaggerated maneuver: hard launch, sharp spin, lateral jolt, panic stop."""
    return BaseMotionProfile(segments=(
        BaseSegment(duration=1.0),
        BaseSegment(duration=2.0, linear_accel=(3.0, 0.0)),
        BaseSegment(duration=2.0),
        BaseSegment(duration=1.5, yaw_accel=2.4),
        BaseSegment(duration=1.5, yaw_accel=-2.4),
        BaseSegment(duration=1.0),
        BaseSegment(duration=1.0, linear_accel=(-5.0, 0.0)),
        BaseSegment(duration=1.0, linear_accel=(-1.0, 0.0)),
        BaseSegment(duration=2.0),
        BaseSegment(duration=1.0, linear_accel=(0.0, 4.0)),
        BaseSegment(duration=1.0, linear_accel=(0.0, -4.0)),
        BaseSegment(duration=2.0),
        BaseSegment(duration=1.25, yaw_accel=-2.8),
        BaseSegment(duration=1.25, yaw_accel=2.8),
        BaseSegment(duration=5.5),
    ))


def default_scenario() -> Scenario:
    """Grab-and-go: setpoint steps on every joint while the base maneuvers.

    The arm stays elbow-bent throughout; stretched poses make the inertia
    matrix of a tip-heavy arm nearly rank one, which no per-joint controller
    handles well.
    """
    return Scenario(
        arm=default_arm(),
        base=default_base_profile(),
        joint_references=(
            ((0.0, 0.0), (1.5, 0.8), (10.5, 0.2), (18.0, 0.9)),
            ((0.0, 1.35), (2.5, 0.8), (7.0, 1.5), (13.0, 1.0)),
            ((0.0, -1.1), (3.5, -0.6), (7.4, -1.3), (16.0, -0.85)),
        ),
        duration=25.0,
        dt=1e-3,
        initial_state=JointState(q=np.array([0.0, 1.35, -1.1]),
                                 qdot=np.zeros(3)),
    )


def step_response_scenario(arm: ArmModel, step: float = 0.5,
                           duration: float = 6.0, dt: float = 1e-3) -> Scenario:
    """Static base, simultaneous setpoint step on every joint at t = 0."""
    n = arm.n_links
    return Scenario(
        arm=arm,
        base=BaseMotionProfile.static(duration),
        joint_references=tuple(((0.0, step),) for _ in range(n)),
        duration=duration,
        dt=dt,
        initial_state=JointState(q=np.zeros(n), qdot=np.zeros(n)),
    )
