"""Batch command-line front end: config ingestion, scenario execution,
CSV/report emission.

Commands: simulate (roll a schedule through the contact-closed
simulator), optimize (plan + validate the slope sweep), check (run the
built-in invariant suite). All file output is deterministic for a fixed
configuration: fixed field order, floats at 17 significant digits.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import layout
from .collocation import Transcription, hermite_coefficients
from .config import ConfigError, default_config, load_config
from .config import body_from_config, contact_from_config, instance_from_config
from .contact import ContactParams, Terrain, stribeck_coefficient
from .model import BodyParams, BodyState, HromState, LegJointState
from .scenario import slope_sweep, _quasi_static_inputs, build_instance
from .simulate import SimulationAbort, rollout
from .solver import NlpProblem, SolverOptions, fd_gradient, solve
from .spatial import reorthonormalize, rot_x, rot_y

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_NO_CONVERGENCE = 3

TRAJECTORY_HEADER = (
    ["t"]
    + [f"qL{i}" for i in range(12)]
    + [f"dqL{i}" for i in range(12)]
    + [f"rb{i}" for i in range(9)]
    + ["pb_x", "pb_y", "pb_z", "om_x", "om_y", "om_z", "vb_x", "vb_y", "vb_z"]
    + [f"grf{i}_{a}" for i in range(4) for a in "xyz"]
    + ["uT_x", "uT_y", "uT_z", "K", "V"]
)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_trajectory_csv(path, traj):
    """One row per logged state; the input columns of the final row repeat
    the last applied input."""
    n = len(traj.times) - 1
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TRAJECTORY_HEADER) + "\n")
        for k in range(n + 1):
            u = traj.inputs[min(k, n - 1)]
            row = ([traj.times[k]] + list(traj.states[k, layout.Q])
                   + list(traj.states[k, layout.DQ])
                   + list(traj.states[k, layout.RB])
                   + list(traj.states[k, layout.PB])
                   + list(traj.states[k, layout.OM])
                   + list(traj.states[k, layout.VB])
                   + list(traj.grf_world[k].reshape(12))
                   + list(u[layout.UT])
                   + [traj.energies[k, 0], traj.energies[k, 1]])
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_metrics_csv(path, metrics_rows):
    from .scenario import WairMetrics
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(WairMetrics.CSV_FIELDS) + "\n")
        for m in metrics_rows:
            fh.write(",".join(_fmt(v) for v in m.to_row()) + "\n")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def cmd_simulate(config_path, schedule_path, out_dir) -> int:
    try:
        cfg = load_config(config_path) if config_path else default_config()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(schedule_path, "r", encoding="utf-8") as fh:
            schedule = Transcription.from_dict(json.load(fh))
    except FileNotFoundError:
        print(f"config error: schedule file not found: {schedule_path}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"config error: bad schedule file {schedule_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(out_dir, exist_ok=True)
    body = body_from_config(cfg)
    contact = contact_from_config(cfg)
    dt = float(cfg["simulation"]["dt"])
    slope = np.radians(float(cfg["slopes_deg"][0])) if cfg["slopes_deg"] else 0.0
    terrain = Terrain(slope)
    times, U = schedule.knot_times, schedule.inputs

    def input_fn(t):
        t = min(max(t, times[0]), times[-1])
        j = min(int(np.searchsorted(times, t, side="right") - 1), len(times) - 2)
        s = (t - times[j]) / (times[j + 1] - times[j])
        return U[j] + s * (U[j + 1] - U[j])

    try:
        traj = rollout(schedule.states[0], input_fn, dt, schedule.t_f, body,
                       terrain=terrain, contact_params=contact,
                       method=str(cfg["simulation"]["method"]),
                       cone_mu=float(cfg["cone_mu"]))
    except SimulationAbort as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), traj)
    energy = traj.kinetic + traj.potential
    from . import kernels
    feet_z = (kernels.foot_positions_batch(traj.states, body.hip_offsets)
              @ terrain.world_to_terrain_matrix.T)[:, :, 2]
    cone_events = [e for e in traj.events if e["type"] == "cone_violation"]
    summary = {
        "steps": int(len(traj.times) - 1),
        "dt": dt,
        "slope_deg": float(np.degrees(slope)),
        "energy_initial": float(energy[0]),
        "energy_final": float(energy[-1]),
        "energy_drift": float(energy[-1] - energy[0]),
        "max_penetration": float(max(0.0, -float(feet_z.min()))),
        "cone_violations": len(cone_events),
        "events": traj.events,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return EXIT_OK


def cmd_optimize(config_path, out_dir, slopes_override=None) -> int:
    try:
        cfg = load_config(config_path) if config_path else default_config()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = out_dir or cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    slopes = slopes_override if slopes_override is not None else cfg["slopes_deg"]

    results = slope_sweep(cfg, slopes_deg=slopes)
    metrics_rows = []
    any_converged = False
    for inst, transcription, report, metrics in results:
        metrics_rows.append(metrics)
        tag = f"slope_{int(round(np.degrees(inst.terrain.slope))):02d}"
        run_dir = os.path.join(out, tag)
        os.makedirs(run_dir, exist_ok=True)
        if transcription is not None:
            _write_json(os.path.join(run_dir, "plan.json"), transcription.to_dict())
            _write_json(os.path.join(run_dir, "solve_report.json"), report.to_dict())
            _write_replay(run_dir, transcription, inst)
        if report is not None and report.converged:
            any_converged = True
    write_metrics_csv(os.path.join(out, "metrics.csv"), metrics_rows)
    return EXIT_OK if any_converged else EXIT_NO_CONVERGENCE


def _write_replay(run_dir, transcription, inst):
    times, U = transcription.knot_times, transcription.inputs

    def input_fn(t):
        t = min(max(t, times[0]), times[-1])
        j = min(int(np.searchsorted(times, t, side="right") - 1), len(times) - 2)
        s = (t - times[j]) / (times[j + 1] - times[j])
        u = U[j] + s * (U[j + 1] - U[j])
        u[layout.UG] = 0.0
        return u

    try:
        traj = rollout(transcription.states[0], input_fn, inst.sim_dt,
                       transcription.t_f, inst.body, terrain=inst.terrain,
                       contact_params=inst.contact_params, method="euler",
                       cone_mu=inst.cone_mu)
    except SimulationAbort:
        return
    write_trajectory_csv(os.path.join(run_dir, "trajectory.csv"), traj)


def _check_rows(cfg):
    rows = []

    def record(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        rows.append((name, bool(ok), detail))

    def contact_params_valid():
        contact_from_config(cfg)
        return True, "constructed"

    def body_params_valid():
        body_from_config(cfg)
        return True, "constructed"

    def rotation_utilities():
        R = rot_x(0.7) @ rot_y(-0.3)
        err = np.abs(reorthonormalize(R) - R).max()
        return err < 1e-12, f"reprojection residual {err:.2e}"

    def stribeck_identities():
        cp = contact_from_config(cfg)
        s0 = stribeck_coefficient(0.0, cp)
        sinf = stribeck_coefficient(100.0 * cp.v_s, cp)
        ok = abs(s0 - cp.mu_s) < 1e-12 and abs(sinf - cp.mu_c) < 1e-9
        return ok, f"s(0)={s0:.6f}, s(100 v_s)={sinf:.6f}"

    def hermite_identities():
        rng = np.random.default_rng(3)
        x0, x1, f0, f1 = rng.normal(size=4)
        h = 0.31
        c = hermite_coefficients(x0, x1, f0, f1, h)
        err = max(abs(float(c[0]) - x0), abs(float(sum(c)) - x1),
                  abs(float(c[1]) / h - f0),
                  abs(float(c[1] + 2 * c[2] + 3 * c[3]) / h - f1))
        return err < 1e-12, f"endpoint identity residual {err:.2e}"

    def energy_drift():
        body = body_from_config(cfg)
        legs = LegJointState.zeros()
        st = HromState(legs, BodyState.at_rest(p=(0.0, 0.0, 5.0)))
        st.body.omega[:] = (2.0, -1.0, 1.5)
        st.body.v[:] = (1.0, 0.5, 2.0)
        dt = float(cfg["simulation"]["dt"])
        n = max(int(round(1.0 / dt)), 1)
        traj = rollout(st.flatten(), lambda t: np.zeros(layout.NU), dt, n * dt,
                       body, method="rk4")
        e = traj.kinetic + traj.potential
        drift = float(np.abs(e - e[0]).max() / abs(e[0]))
        return drift < 1e-6, f"relative drift {drift:.2e} over {n} steps"

    def gradient_order():
        A = np.array([[3.0, 1.0], [1.0, 2.0]])

        def f(x):
            return 0.5 * x @ A @ x + np.sin(x[0])

        x = np.array([0.3, -0.7])
        exact = A @ x + np.array([np.cos(x[0]), 0.0])
        e1 = np.abs(fd_gradient(f, x, 1e-3) - exact).max()
        e2 = np.abs(fd_gradient(f, x, 5e-4) - exact).max()
        ratio = e1 / max(e2, 1e-300)
        return 2.0 < ratio < 8.0, f"Richardson ratio {ratio:.2f} (expect ~4)"

    def solver_bound():
        prob = NlpProblem(n=1, cost=lambda x: float(x[0] ** 2), x0=np.array([3.0]),
                          ineq=lambda x: np.array([x[0] - 1.0]))
        x, rep = solve(prob, SolverOptions(max_outer=50))
        ok = rep.converged and abs(x[0] - 1.0) < 1e-6
        return ok, f"min x^2 s.t. x>=1 -> {x[0]:.8f} ({rep.status})"

    def static_cone_margins():
        inst = build_instance(0.0, cfg)
        from .scenario import build_reference
        refs = build_reference(inst)
        u = _quasi_static_inputs(inst, refs.states[0], refs.stance[0])
        Rt = inst.terrain.world_to_terrain_matrix
        margins = []
        for i in np.flatnonzero(refs.stance[0]):
            f = Rt @ u[layout.foot_u(i)]
            margins.append(float(cfg["cone_mu"]) * f[2] - np.hypot(f[0], f[1]))
        return min(margins) > 0.0, f"standing margins {['%.2f' % m for m in margins]}"

    record("contact-params-valid", contact_params_valid)
    record("body-params-valid", body_params_valid)
    record("rotation-utilities", rotation_utilities)
    record("stribeck-identities", stribeck_identities)
    record("hermite-identities", hermite_identities)
    record("energy-drift", energy_drift)
    record("fd-gradient-order", gradient_order)
    record("solver-bound-constraint", solver_bound)
    record("static-cone-margins", static_cone_margins)
    return rows


def cmd_check(config_path) -> int:
    try:
        cfg = load_config(config_path) if config_path else default_config()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = _check_rows(cfg)
    width = max(len(name) for name, _, _ in rows)
    all_ok = True
    for name, ok, detail in rows:
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name.ljust(width)}  {detail}")
    return EXIT_OK if all_ok else EXIT_CONFIG


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="thrusterquad",
        description="Reduced-order thruster-assisted quadruped: simulation "
                    "and incline gait planning.")
    parser.add_argument("--seed", type=int, default=0,
                        help="reserved; runs are deterministic")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="roll an input schedule through the simulator")
    p_sim.add_argument("--config", default=None, help="scenario config JSON")
    p_sim.add_argument("--schedule", required=True, help="transcription-format schedule JSON")
    p_sim.add_argument("--out", default="out", help="output directory")

    p_opt = sub.add_parser("optimize", help="plan and validate the slope sweep")
    p_opt.add_argument("--config", default=None)
    p_opt.add_argument("--out", default=None)
    p_opt.add_argument("--slopes", default=None,
                       help="comma-separated slope list in degrees (overrides config)")

    p_chk = sub.add_parser("check", help="run the built-in invariant checks")
    p_chk.add_argument("--config", default=None)

    args = parser.parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.config, args.schedule, args.out)
    if args.command == "optimize":
        slopes = None
        if args.slopes is not None:
            try:
                slopes = [float(s) for s in args.slopes.split(",") if s.strip()]
            except ValueError:
                print(f"config error: bad --slopes value {args.slopes!r}", file=sys.stderr)
                return EXIT_CONFIG
        return cmd_optimize(args.config, args.out, slopes)
    return cmd_check(args.config)


if __name__ == "__main__":
    sys.exit(main())
