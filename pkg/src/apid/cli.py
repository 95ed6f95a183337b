"""Command-line interface: simulate, tune, ZN-bootstrap, compliance sweep.

Configs are JSON (human-diffable), traces are CSV (universal plotting).
Exit codes are fixed so campaign scripts can branch: 0 success, 2 config
parse error, 3 simulation divergence, 4 Ziegler-Nichols failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bayesopt
from ._fmt import csv_line
from .control import (
    NonlinearPidParams,
    NoOscillationFound,
    PidGains,
    UnstableProbe,
    ZnProbeConfig,
    ziegler_nichols_tune,
)
from .dynamics import (
    ArmModel,
    BaseMotionProfile,
    BaseSegment,
    JointState,
    SimulationDiverged,
    SingularConfiguration,
    compliance_ellipsoid,
)
from .harness import (
    ControllerAssignment,
    Scenario,
    rollout,
    staged_tune,
    write_rollout_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ZN_FAILED = 4


class ConfigError(Exception):
    """Config problem; the message names the offending key."""


def _require(d: dict, key: str, path: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"missing key '{path}{key}'")
    return d[key]


def _number(d: dict, key: str, path: str, default=None) -> float:
    if default is not None and key not in d:
        return float(default)
    v = _require(d, key, path)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"key '{path}{key}' must be a number")
    return float(v)


def _vector(d: dict, key: str, path: str, default=None):
    if default is not None and key not in d:
        return default
    v = _require(d, key, path)
    if not isinstance(v, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"key '{path}{key}' must be a list of numbers")
    return [float(x) for x in v]


# ---------------------------------------------------------------------------
# JSON <-> domain objects
# ---------------------------------------------------------------------------


def arm_from_dict(d: dict, path: str = "arm.") -> ArmModel:
    lengths = _vector(d, "link_lengths", path)
    scalar_ok = lambda key, dflt: (
        _number(d, key, path, dflt) if not isinstance(d.get(key), list)
        else _vector(d, key, path))
    try:
        return ArmModel(
            link_lengths=np.asarray(lengths),
            link_masses=np.asarray(_vector(d, "link_masses", path)),
            payload_mass=_number(d, "payload_mass", path, 0.0),
            joint_viscous_friction=np.asarray(scalar_ok("joint_viscous_friction", 0.5)),
            joint_stiffness=np.asarray(scalar_ok("joint_stiffness", 100.0)),
            gravity=_number(d, "gravity", path, 9.81),
            torque_limit=_number(d, "torque_limit", path, 150.0),
        )
    except ValueError as e:
        raise ConfigError(f"invalid '{path[:-1]}' section: {e}") from e


def arm_to_dict(arm: ArmModel) -> dict:
    return {
        "link_lengths": list(arm.link_lengths),
        "link_masses": list(arm.link_masses),
        "payload_mass": arm.payload_mass,
        "joint_viscous_friction": list(arm.joint_viscous_friction),
        "joint_stiffness": list(arm.joint_stiffness),
        "gravity": arm.gravity,
        "torque_limit": arm.torque_limit,
    }


def base_from_dict(d: dict, path: str = "base.") -> BaseMotionProfile:
    segs = _require(d, "segments", path)
    if not isinstance(segs, list) or not segs:
        raise ConfigError(f"key '{path}segments' must be a non-empty list")
    out = []
    for i, s in enumerate(segs):
        spath = f"{path}segments[{i}]."
        la = _vector(s, "linear_accel", spath, default=[0.0, 0.0])
        if len(la) != 2:
            raise ConfigError(f"key '{spath}linear_accel' must have 2 entries")
        try:
            out.append(BaseSegment(duration=_number(s, "duration", spath),
                                   linear_accel=(la[0], la[1]),
                                   yaw_accel=_number(s, "yaw_accel", spath, 0.0)))
        except ValueError as e:
            raise ConfigError(f"invalid '{spath[:-1]}': {e}") from e
    v0 = _vector(d, "initial_linear_velocity", path, default=[0.0, 0.0])
    return BaseMotionProfile(segments=tuple(out),
                             initial_linear_velocity=(v0[0], v0[1]),
                             initial_yaw_rate=_number(d, "initial_yaw_rate", path, 0.0))


def base_to_dict(base: BaseMotionProfile) -> dict:
    return {
        "initial_linear_velocity": list(base.initial_linear_velocity),
        "initial_yaw_rate": base.initial_yaw_rate,
        "segments": [
            {"duration": s.duration, "linear_accel": list(s.linear_accel),
             "yaw_accel": s.yaw_accel}
            for s in base.segments
        ],
    }


def scenario_from_dict(d: dict) -> Scenario:
    arm = arm_from_dict(_require(d, "arm", ""))
    base = base_from_dict(_require(d, "base", ""))
    refs_raw = _require(d, "joint_references", "")
    if not isinstance(refs_raw, list):
        raise ConfigError("key 'joint_references' must be a list (one per joint)")
    refs = []
    for j, sched in enumerate(refs_raw):
        if not isinstance(sched, list):
            raise ConfigError(f"key 'joint_references[{j}]' must be a list")
        entries = []
        for k, tv in enumerate(sched):
            if (not isinstance(tv, list)) or len(tv) != 2 or not all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) for x in tv):
                raise ConfigError(
                    f"key 'joint_references[{j}][{k}]' must be [time, value]")
            entries.append((float(tv[0]), float(tv[1])))
        refs.append(tuple(entries))
    ist = _require(d, "initial_state", "")
    q0 = _vector(ist, "q", "initial_state.")
    qd0 = _vector(ist, "qdot", "initial_state.", default=[0.0] * len(q0))
    try:
        return Scenario(
            arm=arm, base=base, joint_references=tuple(refs),
            duration=_number(d, "duration", "", 25.0),
            dt=_number(d, "dt", "", 1e-3),
            initial_state=JointState(q=np.asarray(q0), qdot=np.asarray(qd0)),
        )
    except ValueError as e:
        raise ConfigError(f"invalid scenario: {e}") from e


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "arm": arm_to_dict(sc.arm),
        "base": base_to_dict(sc.base),
        "joint_references": [[[t, v] for t, v in sched]
                             for sched in sc.joint_references],
        "duration": sc.duration,
        "dt": sc.dt,
        "initial_state": {"q": list(sc.initial_state.q),
                          "qdot": list(sc.initial_state.qdot)},
    }


def controller_from_dict(d: dict, path: str):
    kind = _require(d, "type", path)
    try:
        if kind == "pid":
            return PidGains(kp=_number(d, "kp", path), ki=_number(d, "ki", path),
                            kd=_number(d, "kd", path))
        if kind == "adaptive":
            return NonlinearPidParams(
                kp_min=_number(d, "kp_min", path),
                kp_max=_number(d, "kp_max", path),
                tau_p=_number(d, "tau_p", path),
                kd_max=_number(d, "kd_max", path),
                tau_d=_number(d, "tau_d", path),
                ki=_number(d, "ki", path, 0.0),
            )
    except ValueError as e:
        raise ConfigError(f"invalid controller at '{path[:-1]}': {e}") from e
    raise ConfigError(f"key '{path}type' must be 'pid' or 'adaptive'")


def controller_to_dict(c) -> dict:
    if isinstance(c, PidGains):
        return {"type": "pid", "kp": c.kp, "ki": c.ki, "kd": c.kd}
    return {"type": "adaptive", "kp_min": c.kp_min, "kp_max": c.kp_max,
            "tau_p": c.tau_p, "kd_max": c.kd_max, "tau_d": c.tau_d, "ki": c.ki}


def assignment_from_dict(d: dict) -> ControllerAssignment:
    joints = _require(d, "joints", "")
    if not isinstance(joints, list) or not joints:
        raise ConfigError("key 'joints' must be a non-empty list")
    return ControllerAssignment(tuple(
        controller_from_dict(c, f"joints[{j}].") for j, c in enumerate(joints)))


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} file is not valid JSON: {e}")


def _write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_sim(args) -> int:
    try:
        scenario = scenario_from_dict(_load_json(args.scenario, "scenario"))
        assignment = assignment_from_dict(_load_json(args.controllers, "controllers"))
        if len(assignment.controllers) != scenario.arm.n_links:
            raise ConfigError("key 'joints' must list one controller per joint")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        trace = rollout(scenario, assignment)
    except SimulationDiverged as e:
        print(f"simulation diverged at t={e.time:.6f} s", file=sys.stderr)
        return EXIT_DIVERGED
    write_rollout_csv(trace, out / "rollout.csv")
    costs = trace.joint_costs(decimate_to=args.decimate_to_n)
    _write_json({"per_joint_cost": list(costs),
                 "p": 1.0, "q": 0.5,
                 "decimate_to_n": args.decimate_to_n},
                out / "costs.json")
    return EXIT_OK


def _zn_all_joints(scenario: Scenario):
    cfg = ZnProbeConfig(dt=scenario.dt)
    return tuple(
        ziegler_nichols_tune(scenario.arm, j, cfg, q_frozen=scenario.initial_state.q)
        for j in range(scenario.arm.n_links))


def cmd_zn(args) -> int:
    try:
        scenario = scenario_from_dict(_load_json(args.scenario, "scenario"))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        gains = _zn_all_joints(scenario)
    except (NoOscillationFound, UnstableProbe) as e:
        print(f"ziegler-nichols tuning failed: {e}", file=sys.stderr)
        return EXIT_ZN_FAILED
    _write_json({"joints": [controller_to_dict(g) for g in gains]},
                out / "zn_gains.json")
    return EXIT_OK


def cmd_tune(args) -> int:
    try:
        scenario = scenario_from_dict(_load_json(args.scenario, "scenario"))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = staged_tune(scenario, seed=args.seed,
                          budget_per_joint=args.budget_per_joint,
                          decimate_to=args.decimate_to_n)
    except (NoOscillationFound, UnstableProbe) as e:
        print(f"ziegler-nichols bootstrap failed: {e}", file=sys.stderr)
        return EXIT_ZN_FAILED
    except SimulationDiverged as e:
        print(f"baseline rollout diverged at t={e.time:.6f} s", file=sys.stderr)
        return EXIT_DIVERGED

    _write_json({"joints": [controller_to_dict(g) for g in res.zn_gains]},
                out / "zn_gains.json")
    for j, trace in enumerate(res.traces):
        bayesopt.write_trace_csv(trace, out / f"bo_trace_joint{j + 1}.csv")
    _write_json({"joints": [controller_to_dict(c) for c in res.assignment.controllers]},
                out / "best_params.json")
    write_rollout_csv(rollout(scenario, res.baseline_assignment),
                      out / "rollout_baseline.csv")
    write_rollout_csv(rollout(scenario, res.assignment),
                      out / "rollout_tuned.csv")
    _write_json({
        "seed": args.seed,
        "budget_per_joint": args.budget_per_joint,
        "decimate_to_n": args.decimate_to_n,
        "baseline_cost_per_joint": list(res.baseline_costs),
        "tuned_cost_per_joint": list(res.tuned_costs),
        "campaign_best_cost_per_joint": [t.best.cost for t in res.traces],
    }, out / "summary.json")
    return EXIT_OK


def cmd_compliance(args) -> int:
    try:
        conf = _load_json(args.config, "compliance config")
        arm = arm_from_dict(_require(conf, "arm", ""))
        grid = _require(conf, "grid", "")
        if not isinstance(grid, list) or len(grid) != arm.n_links:
            raise ConfigError("key 'grid' must list [min, max, count] per joint")
        axes = []
        for j, g in enumerate(grid):
            if (not isinstance(g, list)) or len(g) != 3:
                raise ConfigError(f"key 'grid[{j}]' must be [min, max, count]")
            lo, hi, cnt = float(g[0]), float(g[1]), int(g[2])
            if cnt < 1 or hi < lo:
                raise ConfigError(f"key 'grid[{j}]' must satisfy min <= max, count >= 1")
            axes.append(np.linspace(lo, hi, cnt))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = arm.n_links
    qcols = [f"q{j + 1}" for j in range(n)]
    nan = float("nan")
    with open(out / "compliance.csv", "w") as fh:
        fh.write(",".join(qcols) +
                 ",singular,axis1_len,axis2_len,axis1_x,axis1_y,axis2_x,axis2_y\n")
        for q in _cartesian(axes):
            try:
                ell = compliance_ellipsoid(arm, q)
                flag = "false"
                vals = [float(ell.semi_axis_lengths[0]), float(ell.semi_axis_lengths[1]),
                        float(ell.semi_axis_directions[0, 0]), float(ell.semi_axis_directions[1, 0]),
                        float(ell.semi_axis_directions[0, 1]), float(ell.semi_axis_directions[1, 1])]
            except SingularConfiguration:
                flag = "true"
                vals = [nan] * 6
            fh.write(csv_line([*map(float, q), flag, *vals]))
    return EXIT_OK


def _cartesian(axes):
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="apid",
        description="Simulate and tune adaptive PID joint controllers for a "
                    "planar arm on a moving base.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("sim", help="roll out a scenario under given controllers")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--controllers", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--decimate-to-n", type=int, default=None)
    p_sim.set_defaults(func=cmd_sim)

    p_tune = sub.add_parser("tune", help="run the staged tuning campaign")
    p_tune.add_argument("--scenario", required=True)
    p_tune.add_argument("--out", required=True)
    p_tune.add_argument("--seed", type=int, default=42)
    p_tune.add_argument("--budget-per-joint", type=int, default=20)
    p_tune.add_argument("--decimate-to-n", type=int, default=None)
    p_tune.set_defaults(func=cmd_tune)

    p_zn = sub.add_parser("zn", help="Ziegler-Nichols bootstrap only")
    p_zn.add_argument("--scenario", required=True)
    p_zn.add_argument("--out", required=True)
    p_zn.set_defaults(func=cmd_zn)

    p_comp = sub.add_parser("compliance", help="sweep compliance ellipsoids over a grid")
    p_comp.add_argument("--config", required=True)
    p_comp.add_argument("--out", required=True)
    p_comp.set_defaults(func=cmd_compliance)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
