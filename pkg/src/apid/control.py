"""Joint controllers: constant-gain PID, error-scheduled adaptive PID, and
closed-loop Ziegler-Nichols tuning.

The adaptive controller keeps the PID structure but modulates the
proportional and derivative gains with the instantaneous tracking error:
Kp rises from kp_min toward kp_max as |e| grows (sech-shaped transition with
slope parameter tau_p), while Kd collapses from kd_max toward zero as |e|
grows (Gaussian with width parameter tau_d).  Far from the setpoint the loop
is stiff and lightly damped for speed; near it, soft and heavily damped.
The integral gain stays constant.

Discretization shared by both controllers: trapezoidal integral with an
anti-windup clamp, backward-difference error rate through a first-order
low-pass (100 rad/s cutoff).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dynamics import (
    ArmModel,
    _coriolis_core,
    _gravity_core,
    _mass_matrix_core,
)

DERIV_FILTER_CUTOFF = 100.0  # rad/s
DEFAULT_TORQUE_LIMIT = 150.0


class NoOscillationFound(Exception):
    """Gain sweep hit the cap without producing a sustained oscillation."""

    def __init__(self, gain_cap: float):
        super().__init__(
            f"no sustained oscillation below gain cap {gain_cap:g}"
        )
        self.gain_cap = gain_cap


class UnstableProbe(Exception):
    """Probe response diverged before a decaying response was ever seen."""


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0 or self.kd < 0:
            raise ValueError("PID gains must be non-negative")


@dataclass(frozen=True)
class NonlinearPidParams:
    """Five tunable shape parameters plus the fixed integral gain."""

    kp_min: float
    kp_max: float
    tau_p: float
    kd_max: float
    tau_d: float
    ki: float = 0.0

    def __post_init__(self):
        if not 0 < self.kp_min <= self.kp_max:
            raise ValueError("need 0 < kp_min <= kp_max")
        if self.tau_p < 0 or self.tau_d < 0:
            raise ValueError("gain-shape rates must be non-negative")
        if self.kd_max < 0 or self.ki < 0:
            raise ValueError("kd_max and ki must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.kp_min, self.kp_max, self.tau_p, self.kd_max, self.tau_d, self.ki]
        )


@dataclass(frozen=True)
class ControllerState:
    integral_accumulator: float = 0.0
    previous_filtered_error_rate: float = 0.0
    previous_error: float = 0.0


# ---------------------------------------------------------------------------
# gain laws and the shared discretized PID step (numba cores)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _kp_gain(kp_min, kp_max, tau_p, e):
    x = tau_p * e
    return kp_max - 2.0 * (kp_max - kp_min) / (np.exp(-x) + np.exp(x))


@njit(cache=True, nogil=True)
def _kd_gain(kd_max, tau_d, e):
    return kd_max * np.exp(-tau_d * e * e)


@njit(cache=True, nogil=True)
def _pid_step_core(kp_min, kp_max, tau_p, kd_max, tau_d, ki,
                   integ, prev_filt, prev_err, e, dt, u_limit):
    # trapezoidal integral with anti-windup: |ki * I| <= u_limit
    integ2 = integ + 0.5 * dt * (e + prev_err)
    if ki > 0.0:
        lim = u_limit / ki
        if integ2 > lim:
            integ2 = lim
        elif integ2 < -lim:
            integ2 = -lim
    raw_rate = (e - prev_err) / dt
    a = np.exp(-DERIV_FILTER_CUTOFF * dt)
    filt2 = a * prev_filt + (1.0 - a) * raw_rate
    kp = _kp_gain(kp_min, kp_max, tau_p, e)
    kd = _kd_gain(kd_max, tau_d, e)
    u = kp * e + ki * integ2 + kd * filt2
    return u, integ2, filt2, kp, kd


# ---------------------------------------------------------------------------
# public controller API
# ---------------------------------------------------------------------------


def kp_of_error(params: NonlinearPidParams, e: float) -> float:
    """Proportional gain at tracking error e: kp_min at 0, kp_max far out."""
    return float(_kp_gain(params.kp_min, params.kp_max, params.tau_p, e))


def kd_of_error(params: NonlinearPidParams, e: float) -> float:
    """Derivative gain at tracking error e: kd_max at 0, vanishing far out."""
    return float(_kd_gain(params.kd_max, params.tau_d, e))


def control_step(params: NonlinearPidParams, state: ControllerState,
                 theta_ref: float, theta: float, dt: float,
                 u_limit: float = DEFAULT_TORQUE_LIMIT):
    """One adaptive-PID update; returns (u, new_state, (kp, kd)).

    u is unsaturated: the plant clamps it and records the clamped value.
    u_limit only bounds the integral contribution (anti-windup).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    e = theta_ref - theta
    u, integ, filt, kp, kd = _pid_step_core(
        params.kp_min, params.kp_max, params.tau_p, params.kd_max,
        params.tau_d, params.ki,
        state.integral_accumulator, state.previous_filtered_error_rate,
        state.previous_error, e, dt, u_limit,
    )
    new_state = ControllerState(integral_accumulator=integ,
                                previous_filtered_error_rate=filt,
                                previous_error=e)
    return float(u), new_state, (float(kp), float(kd))


def pid_control_step(gains: PidGains, state: ControllerState,
                     theta_ref: float, theta: float, dt: float,
                     u_limit: float = DEFAULT_TORQUE_LIMIT):
    """Constant-gain PID with the same discretization; returns (u, new_state)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    e = theta_ref - theta
    # constant gains are the collapsed gain laws (kp_min = kp_max, tau_d = 0)
    u, integ, filt, _, _ = _pid_step_core(
        gains.kp, gains.kp, 0.0, gains.kd, 0.0, gains.ki,
        state.integral_accumulator, state.previous_filtered_error_rate,
        state.previous_error, e, dt, u_limit,
    )
    new_state = ControllerState(integral_accumulator=integ,
                                previous_filtered_error_rate=filt,
                                previous_error=e)
    return float(u), new_state


def collapsed_params(gains: PidGains) -> NonlinearPidParams:
    """Adaptive-parameter encoding of a constant-gain PID (exact equivalence)."""
    return NonlinearPidParams(kp_min=gains.kp, kp_max=gains.kp, tau_p=0.0,
                              kd_max=gains.kd, tau_d=0.0, ki=gains.ki)


# ---------------------------------------------------------------------------
# Ziegler-Nichols ultimate-gain tuning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZnProbeConfig:
    """Settings for the proportional-only oscillation search."""

    setpoint_offset: float = 0.1   # rad, step used to excite the joint
    duration: float = 16.0         # s per probe run
    dt: float = 1e-3
    initial_gain: float = 2.0
    gain_cap: float = 1e5
    sweep_factor: float = 1.2
    period_spread_tol: float = 0.10
    amplitude_decay_tol: float = 0.05
    transient_skip: float = 0.25   # fraction of the record discarded
    min_half_periods: int = 6


@dataclass(frozen=True)
class UltimateGain:
    ku: float
    tu: float


_DECAYING = 0
_SUSTAINED = 1
_GROWING = 2
_DIVERGED = 3


def _classify_oscillation(err: np.ndarray, dt: float, cfg: ZnProbeConfig,
                          sat_mask: np.ndarray | None = None):
    """Label a probe error record; returns (label, period_estimate)."""
    if not np.all(np.isfinite(err)) or np.max(np.abs(err)) > 1e6:
        return _DIVERGED, None
    skip = int(len(err) * cfg.transient_skip)
    # a limit cycle held up by torque saturation is past the stability margin,
    # not a marginal oscillation
    saturated = sat_mask is not None and np.mean(sat_mask[skip:]) > 0.02
    tail = err[skip:]
    x = tail - np.mean(tail)
    sign = np.sign(x)
    sign[sign == 0] = 1.0
    flips = np.nonzero(sign[1:] != sign[:-1])[0]
    if len(flips) < cfg.min_half_periods + 1:
        return _DECAYING, None
    # sub-sample crossing times by linear interpolation
    t_cross = (flips + x[flips] / (x[flips] - x[flips + 1])) * dt
    half = np.diff(t_cross)[-(cfg.min_half_periods + 4):]
    if len(half) < cfg.min_half_periods:
        return _DECAYING, None
    spread = (np.max(half) - np.min(half)) / np.mean(half)
    # peak amplitude inside each half-cycle, then per-full-cycle ratio
    amps = []
    for a, b in zip(flips[:-1], flips[1:]):
        amps.append(np.max(np.abs(x[a:b + 2])))
    amps = np.array(amps[-(cfg.min_half_periods + 4):])
    if np.any(amps <= 0):
        return _DECAYING, None
    ratios = amps[2:] / amps[:-2]
    r = float(np.median(ratios))
    period = 2.0 * float(np.mean(half))
    if spread > cfg.period_spread_tol:
        # irregular: treat growth as instability, otherwise as not yet critical
        return (_GROWING if r > 1.0 + cfg.amplitude_decay_tol else _DECAYING), period
    if r > 1.0 + cfg.amplitude_decay_tol:
        return _GROWING, period
    if r < 1.0 - cfg.amplitude_decay_tol:
        return _DECAYING, period
    if saturated:
        return _GROWING, period
    return _SUSTAINED, period


def _run_probe(probe, gain, cfg):
    out = probe(gain)
    if isinstance(out, tuple):
        err, sat = out
    else:
        err, sat = out, None
    return _classify_oscillation(np.asarray(err, dtype=float), cfg.dt, cfg, sat)


def ultimate_gain_search(probe, cfg: ZnProbeConfig) -> UltimateGain:
    """Find the marginal proportional gain of a closed loop.

    ``probe(K)`` must simulate the loop under proportional gain K and return
    the error record sampled at cfg.dt (optionally a tuple with a
    saturation mask).  Sweeps K geometrically until the response stops
    decaying, then bisects the bracket until the oscillation is sustained
    (period spread and per-cycle amplitude change inside the configured
    tolerances).
    """
    k = cfg.initial_gain
    k_low = None
    k_high = None
    last_period = None
    while k <= cfg.gain_cap:
        label, period = _run_probe(probe, k, cfg)
        if label == _SUSTAINED:
            return UltimateGain(ku=k, tu=period)
        if label == _DECAYING:
            k_low = k
        else:
            if k_low is None:
                raise UnstableProbe(
                    f"response grew at the lowest probed gain {k:g}"
                )
            k_high = k
            last_period = period
            break
        k *= cfg.sweep_factor
    if k_high is None:
        raise NoOscillationFound(cfg.gain_cap)
    for _ in range(60):
        if k_high / k_low < 1.002:
            break
        mid = math.sqrt(k_low * k_high)
        label, period = _run_probe(probe, mid, cfg)
        if label == _SUSTAINED:
            return UltimateGain(ku=mid, tu=period)
        if label == _DECAYING:
            k_low = mid
        else:
            k_high = mid
            if period is not None:
                last_period = period
    if last_period is None:
        raise NoOscillationFound(cfg.gain_cap)
    return UltimateGain(ku=math.sqrt(k_low * k_high), tu=last_period)


def zn_gains_from_ultimate(ug: UltimateGain) -> PidGains:
    """Classic Ziegler-Nichols table: Kp=0.6Ku, Ti=Tu/2, Td=Tu/8."""
    return PidGains(kp=0.6 * ug.ku,
                    ki=1.2 * ug.ku / ug.tu,
                    kd=0.075 * ug.ku * ug.tu)


@njit(cache=True, nogil=True)
def _frozen_joint_probe_kernel(lengths, masses, payload, fric, grav,
                               tlimit, q_frozen, jidx, q_ref, gain,
                               dt, n_steps):
    # 1-DOF probe: all other joints pinned, sampled proportional control
    n = lengths.shape[0]
    q = q_frozen.copy()
    qd = np.zeros(n)
    err = np.empty(n_steps)
    sat = np.zeros(n_steps, dtype=np.uint8)
    for step_i in range(n_steps):
        e = q_ref - q[jidx]
        err[step_i] = e
        u = gain * e
        if u > tlimit:
            u = tlimit
            sat[step_i] = 1
        elif u < -tlimit:
            u = -tlimit
            sat[step_i] = 1
        # RK4 on the single free coordinate
        y0 = q[jidx]
        v0 = qd[jidx]
        kq = np.empty(4)
        kv = np.empty(4)
        yy = y0
        vv = v0
        for stage in range(4):
            q[jidx] = yy
            qd[jidx] = vv
            M = _mass_matrix_core(lengths, masses, payload, q)
            C = _coriolis_core(lengths, masses, payload, q, qd)
            G = _gravity_core(lengths, masses, payload, grav, q)
            acc = (u - C[jidx, jidx] * vv - G[jidx] - fric[jidx] * vv) / M[jidx, jidx]
            kq[stage] = vv
            kv[stage] = acc
            if stage == 0:
                yy = y0 + 0.5 * dt * kq[0]
                vv = v0 + 0.5 * dt * kv[0]
            elif stage == 1:
                yy = y0 + 0.5 * dt * kq[1]
                vv = v0 + 0.5 * dt * kv[1]
            elif stage == 2:
                yy = y0 + dt * kq[2]
                vv = v0 + dt * kv[2]
        q[jidx] = y0 + (dt / 6.0) * (kq[0] + 2.0 * kq[1] + 2.0 * kq[2] + kq[3])
        qd[jidx] = v0 + (dt / 6.0) * (kv[0] + 2.0 * kv[1] + 2.0 * kv[2] + kv[3])
        if abs(q[jidx]) > 1e7 or abs(qd[jidx]) > 1e7 or np.isnan(q[jidx]):
            for rest in range(step_i + 1, n_steps):
                err[rest] = 1e9
            break
    return err, sat


def frozen_joint_probe(model: ArmModel, joint_index: int, q_frozen,
                       cfg: ZnProbeConfig):
    """Probe callable for one arm joint with all others pinned."""
    q_frozen = model.check_q(q_frozen)
    n_steps = int(round(cfg.duration / cfg.dt))
    q_ref = float(q_frozen[joint_index] + cfg.setpoint_offset)

    def probe(gain: float):
        return _frozen_joint_probe_kernel(
            model.link_lengths, model.link_masses, model.payload_mass,
            model.joint_viscous_friction, model.gravity, model.torque_limit,
            q_frozen, joint_index, q_ref, gain, cfg.dt, n_steps)

    return probe


def ziegler_nichols_tune(model: ArmModel, joint_index: int,
                         probe_config=None, q_frozen=None) -> PidGains:
    """Tune one joint by the closed-loop ultimate-gain experiment.

    Other joints stay pinned at ``q_frozen`` (zeros by default) while the
    probed joint runs sampled proportional control toward a small setpoint
    step.  Raises NoOscillationFound / UnstableProbe on degenerate plants.
    """
    if not 0 <= joint_index < model.n_links:
        raise ValueError("joint_index out of range")
    cfg = probe_config or ZnProbeConfig()
    if q_frozen is None:
        q_frozen = np.zeros(model.n_links)
    probe = frozen_joint_probe(model, joint_index, q_frozen, cfg)
    return zn_gains_from_ultimate(ultimate_gain_search(probe, cfg))


def linear_siso_probe(denominator, dt: float = 0.01, duration: float = 90.0):
    """Probe callable for a unity-feedback loop around K / d(s).

    ``denominator`` lists the coefficients of d(s), highest power first.
    The closed loop is sampled exactly (matrix exponential), so the record
    reflects the continuous-time loop at any dt.  Useful as a known-oracle
    plant for the ultimate-gain search.
    """
    from scipy.linalg import expm

    den = np.asarray(denominator, dtype=float)
    if den[0] == 0:
        raise ValueError("leading denominator coefficient must be nonzero")
    den = den / den[0]
    order = len(den) - 1
    n_steps = int(round(duration / dt))

    def probe(gain: float) -> np.ndarray:
        # companion form of d(s) y = gain * e, e = r - y, r = 1 step
        A = np.zeros((order, order))
        A[:-1, 1:] = np.eye(order - 1)
        A[-1, :] = -den[:0:-1]
        A[-1, 0] -= gain
        B = np.zeros(order)
        B[-1] = gain
        M = np.zeros((order + 1, order + 1))
        M[:order, :order] = A * dt
        M[:order, order] = B * dt
        E = expm(M)
        Ad = E[:order, :order]
        Bd = E[:order, order]
        x = np.zeros(order)
        err = np.empty(n_steps)
        for k in range(n_steps):
            err[k] = 1.0 - x[0]
            x = Ad @ x + Bd
        return err

    return probe
