"""Planar n-link arm dynamics on a prescribed moving base.

The arm is a serial chain of rigid links moving in a plane attached to the
mobile base.  Each link's mass is lumped at its midpoint and the payload is a
point mass at the end-effector.  Joint torques drive the standard rigid-body
equation

    M(q) qdd + C(q, qd) qd + G(q) = u_sat + tau_dist - b*qd

where ``tau_dist`` collects the inertial pseudo-forces (translational,
centrifugal, Coriolis, Euler) that the base maneuver exerts on every lumped
mass, mapped through that point's positional Jacobian.  The base motion is
prescribed as piecewise-constant accelerations, so it is a disturbance source,
not a controlled degree of freedom.

All functions are pure; integration uses fixed-step RK4 so closed-loop
rollouts are deterministic.  The numerical core is numba-compiled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit


class SingularConfiguration(Exception):
    """Arm pose where the end-effector stiffness map is rank deficient."""


class SimulationDiverged(Exception):
    """State left the trusted numeric range during integration."""

    def __init__(self, time: float):
        super().__init__(f"simulation diverged at t={time:.6f} s")
        self.time = time


DIVERGENCE_LIMIT = 1e6
SINGULARITY_TOL = 1e-9


# ---------------------------------------------------------------------------
# model types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArmModel:
    """Kinematic and inertial description of the planar arm.

    Link masses are lumped at link midpoints, the payload at the tip.
    ``gravity`` is the in-plane downward acceleration (use 0 for an arm
    working in a horizontal plane).  ``torque_limit`` applies to every joint.
    """

    link_lengths: np.ndarray
    link_masses: np.ndarray
    payload_mass: float = 0.0
    joint_viscous_friction: np.ndarray | float = 0.0
    joint_stiffness: np.ndarray | float = 100.0
    gravity: float = 9.81
    torque_limit: float = 150.0

    def __post_init__(self):
        lengths = np.atleast_1d(np.asarray(self.link_lengths, dtype=float))
        masses = np.atleast_1d(np.asarray(self.link_masses, dtype=float))
        n = lengths.shape[0]
        fric = np.broadcast_to(
            np.asarray(self.joint_viscous_friction, dtype=float), (n,)
        ).copy()
        stiff = np.broadcast_to(
            np.asarray(self.joint_stiffness, dtype=float), (n,)
        ).copy()
        if n < 1:
            raise ValueError("need at least one link")
        if masses.shape[0] != n:
            raise ValueError("link_masses length must match link_lengths")
        if np.any(lengths < 0) or np.any(masses < 0) or self.payload_mass < 0:
            raise ValueError("lengths and masses must be non-negative")
        if np.any(fric < 0) or np.any(stiff < 0):
            raise ValueError("friction and stiffness must be non-negative")
        if not self.torque_limit > 0:
            raise ValueError("torque_limit must be positive")
        for name, val in (
            ("link_lengths", lengths),
            ("link_masses", masses),
            ("joint_viscous_friction", fric),
            ("joint_stiffness", stiff),
        ):
            object.__setattr__(self, name, val)

    @property
    def n_links(self) -> int:
        return self.link_lengths.shape[0]

    def check_q(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if q.shape != (self.n_links,):
            raise ValueError(
                f"expected {self.n_links} joint angles, got shape {q.shape}"
            )
        return q


@dataclass(frozen=True)
class JointState:
    """Joint angles/velocities at time t."""

    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        qd = np.atleast_1d(np.asarray(self.qdot, dtype=float))
        if q.shape != qd.shape:
            raise ValueError("q and qdot must have the same length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("joint state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)


@dataclass(frozen=True)
class BaseSegment:
    """One piecewise-constant-acceleration stretch of the base maneuver."""

    duration: float
    linear_accel: tuple[float, float] = (0.0, 0.0)
    yaw_accel: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")
        object.__setattr__(
            self, "linear_accel", (float(self.linear_accel[0]), float(self.linear_accel[1]))
        )


@dataclass(frozen=True)
class BaseMotionProfile:
    """Prescribed base motion: world-frame linear acceleration + yaw acceleration.

    Velocity and yaw rate are the continuous piecewise-linear integrals of the
    segments, starting from the given initial values.  Yaw angle starts at 0.
    """

    segments: tuple[BaseSegment, ...]
    initial_linear_velocity: tuple[float, float] = (0.0, 0.0)
    initial_yaw_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @staticmethod
    def static(duration: float) -> "BaseMotionProfile":
        return BaseMotionProfile(segments=(BaseSegment(duration=duration),))

    @property
    def horizon(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def as_arrays(self):
        """Segment boundaries plus yaw rate/angle at each segment start.

        Layout consumed by the numba kernels: (t0, ax, ay, aw, om0, psi0)
        where t0 has one trailing entry equal to the horizon.
        """
        ns = len(self.segments)
        t0 = np.zeros(ns + 1)
        ax = np.zeros(ns)
        ay = np.zeros(ns)
        aw = np.zeros(ns)
        om0 = np.zeros(ns)
        psi0 = np.zeros(ns)
        om = float(self.initial_yaw_rate)
        psi = 0.0
        t = 0.0
        for i, seg in enumerate(self.segments):
            t0[i] = t
            ax[i], ay[i] = seg.linear_accel
            aw[i] = seg.yaw_accel
            om0[i] = om
            psi0[i] = psi
            d = seg.duration
            psi += om * d + 0.5 * seg.yaw_accel * d * d
            om += seg.yaw_accel * d
            t += d
        t0[ns] = t
        return t0, ax, ay, aw, om0, psi0


@dataclass(frozen=True)
class ComplianceEllipsoid:
    """Eigen-structure of the end-effector compliance map at a configuration."""

    q: np.ndarray
    semi_axis_lengths: np.ndarray
    semi_axis_directions: np.ndarray  # columns are unit vectors


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _joint_points(lengths, q):
    # positions of joint pivots 0..n; pivot k is the base of link k
    n = lengths.shape[0]
    pts = np.zeros((n + 1, 2))
    phi = 0.0
    for j in range(n):
        phi += q[j]
        pts[j + 1, 0] = pts[j, 0] + lengths[j] * math.cos(phi)
        pts[j + 1, 1] = pts[j, 1] + lengths[j] * math.sin(phi)
    return pts


@njit(cache=True, nogil=True)
def _mass_points(lengths, masses, payload, q, joints):
    # lumped masses: one midpoint per link plus the payload at the tip
    n = lengths.shape[0]
    pts = np.empty((n + 1, 2))
    m = np.empty(n + 1)
    link = np.empty(n + 1, dtype=np.int64)
    phi = 0.0
    for j in range(n):
        phi += q[j]
        pts[j, 0] = joints[j, 0] + 0.5 * lengths[j] * math.cos(phi)
        pts[j, 1] = joints[j, 1] + 0.5 * lengths[j] * math.sin(phi)
        m[j] = masses[j]
        link[j] = j
    pts[n, 0] = joints[n, 0]
    pts[n, 1] = joints[n, 1]
    m[n] = payload
    link[n] = n - 1
    return pts, m, link


@njit(cache=True, nogil=True)
def _point_jacobians(joints, pts, link, n):
    # column k of a point's Jacobian: rotate (point - pivot_k) by +90 deg
    npts = pts.shape[0]
    J = np.zeros((npts, 2, n))
    for p in range(npts):
        for k in range(link[p] + 1):
            rx = pts[p, 0] - joints[k, 0]
            ry = pts[p, 1] - joints[k, 1]
            J[p, 0, k] = -ry
            J[p, 1, k] = rx
    return J


@njit(cache=True, nogil=True)
def _pivot_jacobians(joints, n):
    # pivot j moves with joints 0..j-1
    JJ = np.zeros((n + 1, 2, n))
    for j in range(n + 1):
        for k in range(j):
            rx = joints[j, 0] - joints[k, 0]
            ry = joints[j, 1] - joints[k, 1]
            JJ[j, 0, k] = -ry
            JJ[j, 1, k] = rx
    return JJ


@njit(cache=True, nogil=True)
def _mass_matrix_core(lengths, masses, payload, q):
    n = lengths.shape[0]
    joints = _joint_points(lengths, q)
    pts, m, link = _mass_points(lengths, masses, payload, q, joints)
    J = _point_jacobians(joints, pts, link, n)
    M = np.zeros((n, n))
    for p in range(pts.shape[0]):
        for i in range(n):
            for j in range(n):
                M[i, j] += m[p] * (J[p, 0, i] * J[p, 0, j] + J[p, 1, i] * J[p, 1, j])
    return M


@njit(cache=True, nogil=True)
def _dM_tensor(lengths, masses, payload, q):
    # dM[i, j, k] = dM_ij / dq_k, from exact point-Jacobian derivatives
    n = lengths.shape[0]
    joints = _joint_points(lengths, q)
    pts, m, link = _mass_points(lengths, masses, payload, q, joints)
    J = _point_jacobians(joints, pts, link, n)
    JJ = _pivot_jacobians(joints, n)
    dM = np.zeros((n, n, n))
    npts = pts.shape[0]
    # dJ[p][:, i] wrt q_k = perp(J_p[:, k] - JJ_i[:, k]) for i <= link[p]
    dJ = np.zeros((npts, n, n, 2))  # [point, column i, wrt k, xy]
    for p in range(npts):
        for i in range(link[p] + 1):
            for k in range(n):
                dx = J[p, 0, k] - JJ[i, 0, k]
                dy = J[p, 1, k] - JJ[i, 1, k]
                dJ[p, i, k, 0] = -dy
                dJ[p, i, k, 1] = dx
    for p in range(npts):
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    dM[i, j, k] += m[p] * (
                        dJ[p, i, k, 0] * J[p, 0, j]
                        + dJ[p, i, k, 1] * J[p, 1, j]
                        + J[p, 0, i] * dJ[p, j, k, 0]
                        + J[p, 1, i] * dJ[p, j, k, 1]
                    )
    return dM


@njit(cache=True, nogil=True)
def _coriolis_core(lengths, masses, payload, q, qdot):
    # Christoffel symbols of the first kind keep dM/dt - 2C skew-symmetric
    n = lengths.shape[0]
    dM = _dM_tensor(lengths, masses, payload, q)
    C = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for k in range(n):
                acc += 0.5 * (dM[i, j, k] + dM[i, k, j] - dM[j, k, i]) * qdot[k]
            C[i, j] = acc
    return C


@njit(cache=True, nogil=True)
def _gravity_core(lengths, masses, payload, grav, q):
    n = lengths.shape[0]
    joints = _joint_points(lengths, q)
    pts, m, link = _mass_points(lengths, masses, payload, q, joints)
    J = _point_jacobians(joints, pts, link, n)
    G = np.zeros(n)
    for p in range(pts.shape[0]):
        for k in range(n):
            G[k] += m[p] * grav * J[p, 1, k]
    return G


@njit(cache=True, nogil=True)
def _tip_jacobian_core(lengths, q):
    n = lengths.shape[0]
    joints = _joint_points(lengths, q)
    J = np.zeros((2, n))
    for k in range(n):
        rx = joints[n, 0] - joints[k, 0]
        ry = joints[n, 1] - joints[k, 1]
        J[0, k] = -ry
        J[1, k] = rx
    return J


@njit(cache=True, nogil=True)
def _base_state(t0, ax, ay, aw, om0, psi0, t):
    # returns body-frame linear accel, yaw rate, yaw accel at time t
    ns = ax.shape[0]
    tc = t
    if tc > t0[ns]:
        tc = t0[ns]
    s = 0
    while s < ns - 1 and tc >= t0[s + 1]:
        s += 1
    tau = tc - t0[s]
    om = om0[s] + aw[s] * tau
    psi = psi0[s] + om0[s] * tau + 0.5 * aw[s] * tau * tau
    c = math.cos(psi)
    sn = math.sin(psi)
    abx = c * ax[s] + sn * ay[s]
    aby = -sn * ax[s] + c * ay[s]
    return abx, aby, om, aw[s]


@njit(cache=True, nogil=True)
def _disturbance_core(lengths, masses, payload, q, qdot, abx, aby, om, omdot):
    # pseudo-forces of the accelerating, yawing base frame on each lumped mass
    n = lengths.shape[0]
    joints = _joint_points(lengths, q)
    pts, m, link = _mass_points(lengths, masses, payload, q, joints)
    J = _point_jacobians(joints, pts, link, n)
    tau = np.zeros(n)
    for p in range(pts.shape[0]):
        vx = 0.0
        vy = 0.0
        for k in range(n):
            vx += J[p, 0, k] * qdot[k]
            vy += J[p, 1, k] * qdot[k]
        rx = pts[p, 0]
        ry = pts[p, 1]
        fx = m[p] * (om * om * rx - abx + omdot * ry + 2.0 * om * vy)
        fy = m[p] * (om * om * ry - aby - omdot * rx - 2.0 * om * vx)
        for k in range(n):
            tau[k] += J[p, 0, k] * fx + J[p, 1, k] * fy
    return tau


@njit(cache=True, nogil=True)
def _accel_core(lengths, masses, payload, fric, grav, q, qdot, tau_applied,
                abx, aby, om, omdot):
    n = lengths.shape[0]
    for i in range(n):
        # an already-overflowed state would make the linear solve throw
        # instead of flowing into the divergence check
        if not (np.isfinite(q[i]) and np.isfinite(qdot[i])):
            bad = np.empty(n)
            bad[:] = np.nan
            return bad
    M = _mass_matrix_core(lengths, masses, payload, q)
    C = _coriolis_core(lengths, masses, payload, q, qdot)
    G = _gravity_core(lengths, masses, payload, grav, q)
    taud = _disturbance_core(lengths, masses, payload, q, qdot, abx, aby, om, omdot)
    rhs = np.empty(n)
    for i in range(n):
        cv = 0.0
        for j in range(n):
            cv += C[i, j] * qdot[j]
        rhs[i] = tau_applied[i] + taud[i] - cv - G[i] - fric[i] * qdot[i]
    for i in range(n):
        if not np.isfinite(rhs[i]):
            bad = np.empty(n)
            bad[:] = np.nan
            return bad
    return np.linalg.solve(M, rhs)


@njit(cache=True, nogil=True)
def _rk4_arm_step(lengths, masses, payload, fric, grav,
                  t0, ax, ay, aw, om0, psi0,
                  q, qd, tau, t, dt):
    # classic RK4 with the applied torque held constant across the step
    abx, aby, om, omd = _base_state(t0, ax, ay, aw, om0, psi0, t)
    k1q = qd
    k1v = _accel_core(lengths, masses, payload, fric, grav, q, qd, tau,
                      abx, aby, om, omd)
    abx, aby, om, omd = _base_state(t0, ax, ay, aw, om0, psi0, t + 0.5 * dt)
    q2 = q + 0.5 * dt * k1q
    v2 = qd + 0.5 * dt * k1v
    k2q = v2
    k2v = _accel_core(lengths, masses, payload, fric, grav, q2, v2, tau,
                      abx, aby, om, omd)
    q3 = q + 0.5 * dt * k2q
    v3 = qd + 0.5 * dt * k2v
    k3q = v3
    k3v = _accel_core(lengths, masses, payload, fric, grav, q3, v3, tau,
                      abx, aby, om, omd)
    abx, aby, om, omd = _base_state(t0, ax, ay, aw, om0, psi0, t + dt)
    q4 = q + dt * k3q
    v4 = qd + dt * k3v
    k4q = v4
    k4v = _accel_core(lengths, masses, payload, fric, grav, q4, v4, tau,
                      abx, aby, om, omd)
    qn = q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    qdn = qd + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return qn, qdn


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def mass_matrix(model: ArmModel, q) -> np.ndarray:
    """Configuration-dependent inertia matrix (symmetric positive definite)."""
    q = model.check_q(q)
    return _mass_matrix_core(model.link_lengths, model.link_masses,
                             model.payload_mass, q)


def coriolis_matrix(model: ArmModel, q, qdot) -> np.ndarray:
    """Velocity-coupling matrix built from Christoffel symbols of the inertia."""
    q = model.check_q(q)
    qdot = model.check_q(qdot)
    return _coriolis_core(model.link_lengths, model.link_masses,
                          model.payload_mass, q, qdot)


def gravity_vector(model: ArmModel, q) -> np.ndarray:
    """Gradient of gravitational potential w.r.t. joint angles."""
    q = model.check_q(q)
    return _gravity_core(model.link_lengths, model.link_masses,
                         model.payload_mass, model.gravity, q)


def jacobian(model: ArmModel, q) -> np.ndarray:
    """2 x n map from joint rates to end-effector planar velocity."""
    q = model.check_q(q)
    return _tip_jacobian_core(model.link_lengths, q)


def forward_kinematics(model: ArmModel, q) -> np.ndarray:
    """Positions of all joint pivots plus the tip, shape (n+1, 2)."""
    q = model.check_q(q)
    return _joint_points(model.link_lengths, q)


def compliance_matrix(model: ArmModel, q) -> np.ndarray:
    """Tip displacement per unit tip force: inverse of J K J^T."""
    q = model.check_q(q)
    J = _tip_jacobian_core(model.link_lengths, q)
    S = (J * model.joint_stiffness) @ J.T
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    if abs(det) < SINGULARITY_TOL:
        raise SingularConfiguration(
            f"stiffness map singular at q={np.array2string(q, precision=4)}"
        )
    return np.linalg.inv(S)


def compliance_ellipsoid(model: ArmModel, q) -> ComplianceEllipsoid:
    """Eigen-decomposition of the compliance matrix.

    The larger semi-axis is the direction in which a tip force displaces the
    end-effector the most.  Raises SingularConfiguration for stretched or
    folded poses where the map loses rank.
    """
    q = model.check_q(q)
    Cm = compliance_matrix(model, q)
    evals, evecs = np.linalg.eigh(Cm)
    # canonical sign: largest-magnitude component of each axis positive
    for i in range(2):
        j = np.argmax(np.abs(evecs[:, i]))
        if evecs[j, i] < 0:
            evecs[:, i] = -evecs[:, i]
    return ComplianceEllipsoid(q=q, semi_axis_lengths=evals,
                               semi_axis_directions=evecs)


def base_disturbance_torques(model: ArmModel, q, qdot,
                             base: BaseMotionProfile, t: float) -> np.ndarray:
    """Joint torques equivalent to the base-motion pseudo-forces at time t."""
    q = model.check_q(q)
    qdot = model.check_q(qdot)
    if t < 0 or t > base.horizon:
        raise ValueError(f"t={t} outside base profile horizon [0, {base.horizon}]")
    t0, ax, ay, aw, om0, psi0 = base.as_arrays()
    abx, aby, om, omd = _base_state(t0, ax, ay, aw, om0, psi0, t)
    return _disturbance_core(model.link_lengths, model.link_masses,
                             model.payload_mass, q, qdot, abx, aby, om, omd)


def step(model: ArmModel, state: JointState, applied_torques,
         base: BaseMotionProfile, dt: float) -> JointState:
    """Advance the arm one RK4 step under saturated torques and base motion."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    q = model.check_q(state.q)
    qd = model.check_q(state.qdot)
    tau = np.clip(model.check_q(applied_torques),
                  -model.torque_limit, model.torque_limit)
    t0, ax, ay, aw, om0, psi0 = base.as_arrays()
    qn, qdn = _rk4_arm_step(model.link_lengths, model.link_masses,
                            model.payload_mass, model.joint_viscous_friction,
                            model.gravity, t0, ax, ay, aw, om0, psi0,
                            q, qd, tau, state.t, dt)
    if not (np.all(np.isfinite(qn)) and np.all(np.isfinite(qdn))):
        raise SimulationDiverged(state.t + dt)
    return JointState(q=qn, qdot=qdn, t=state.t + dt)


def rk4_step(f, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """One classic RK4 step of y' = f(t, y); test hook for integrator order."""
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(f(t, y))
    k2 = np.asarray(f(t + 0.5 * dt, y + 0.5 * dt * k1))
    k3 = np.asarray(f(t + 0.5 * dt, y + 0.5 * dt * k2))
    k4 = np.asarray(f(t + dt, y + dt * k3))
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def kinetic_energy(model: ArmModel, state: JointState) -> float:
    M = mass_matrix(model, state.q)
    return 0.5 * float(state.qdot @ M @ state.qdot)
