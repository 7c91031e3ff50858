"""Scenario configuration: JSON schema, defaults, validation and the
mapping onto model/planner objects. Unknown keys are rejected."""

from __future__ import annotations

import json

import numpy as np

from . import layout
from .collocation import CostWeights, PlanBounds
from .contact import ContactParams, Terrain
from .model import BodyParams
from .scenario import GaitGeometry, GaitSchedule, WairInstance
from .solver import SolverOptions

SCHEMA_VERSION = 1

_NUM = (int, float)

# key -> (type spec, default); nested dicts validated recursively
_SCHEMA = {
    "schema_version": (int, SCHEMA_VERSION),
    "body": {
        "mass": (_NUM, 5.0),
        "inertia_diag": ("vec3", [0.0981867, 0.0844185, 0.164599]),
        "hip_offsets": ("mat43", [[0.15, 0.07, 0.0], [0.15, -0.07, 0.0],
                                  [-0.15, 0.07, 0.0], [-0.15, -0.07, 0.0]]),
        "leg_length_bounds": ("vec2", [0.15, 0.45]),
        "gravity": ("vec3", [0.0, 0.0, -9.81]),
    },
    "contact": {
        "k1": (_NUM, 1e4),
        "k2": (_NUM, 1e3),
        "mu_c": (_NUM, 0.6),
        "mu_s": (_NUM, 0.7),
        "mu_v": (_NUM, 0.1),
        "v_s": (_NUM, 0.05),
    },
    "cone_mu": (_NUM, 0.7),
    "cone_mu_plan": (_NUM, 0.55),
    "gait": {
        "stride_period": (_NUM, 0.8),
        "stride_length": (_NUM, 0.10),
        "leg_extension": (_NUM, 0.3),
        "swing_clearance": (_NUM, 0.05),
    },
    "bounds": {
        "thruster_xy_max": (_NUM, 10.0),
        "thruster_z_max": (_NUM, 40.0),
    },
    "transcription": {
        "knots": (int, 21),
        "tf_free": (bool, False),
    },
    "weights": {
        "q_joints": (_NUM, 50.0),
        "q_joint_rates": (_NUM, 5.0),
        "q_rotation": (_NUM, 10.0),
        "q_position": (_NUM, 50.0),
        "q_omega": (_NUM, 1.0),
        "q_velocity": (_NUM, 5.0),
        "r_joint_acc": (_NUM, 1e-3),
        "r_grf": (_NUM, 1e-4),
        "r_thruster": (_NUM, 1e-3),
        # allocation policy: thruster effort is discounted as the slope
        # steepens, shifting load from legs to thrusters on inclines
        "r_thruster_slope_discount": (_NUM, 0.9),
    },
    "solver": {
        "tol_eq": (_NUM, 1e-6),
        "tol_ineq": (_NUM, 1e-7),
        "step_tol": (_NUM, 1e-10),
        "max_outer": (int, 200),
        "max_inner": (int, 120),
        "rho0": (_NUM, 10.0),
        "rho_growth": (_NUM, 10.0),
        "fd_step": (_NUM, 1e-6),
        "polish": (bool, True),
    },
    "simulation": {
        "dt": (_NUM, 1e-3),
        "method": (str, "euler"),
    },
    "slopes_deg": ("numlist", [0.0, 10.0, 20.0, 30.0, 45.0]),
    "strides": (int, 1),
    "thruster_impulse_threshold": (_NUM, 8.0),
    "output_dir": (str, "out"),
}


class ConfigError(ValueError):
    pass


def _check_value(path, spec, value):
    if spec == "vec2":
        _check_numlist(path, value, 2)
    elif spec == "vec3":
        _check_numlist(path, value, 3)
    elif spec == "numlist":
        _check_numlist(path, value, None)
    elif spec == "mat43":
        if not (isinstance(value, list) and len(value) == 4):
            raise ConfigError(f"{path}: expected 4 rows")
        for row in value:
            _check_numlist(path, row, 3)
    elif spec is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {value!r}")
    elif spec is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean, got {value!r}")
    elif spec is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
    else:
        if isinstance(value, bool) or not isinstance(value, spec):
            raise ConfigError(f"{path}: expected number, got {value!r}")


def _check_numlist(path, value, length):
    if not isinstance(value, list) or (length is not None and len(value) != length):
        raise ConfigError(f"{path}: expected list of {length or 'numbers'}")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, _NUM):
            raise ConfigError(f"{path}: expected numeric entries, got {v!r}")


def _merge(schema, user, path=""):
    out = {}
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    unknown = set(user) - set(schema)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    for key, spec in schema.items():
        sub_path = f"{path}.{key}" if path else key
        if isinstance(spec, dict):
            out[key] = _merge(spec, user.get(key, {}), sub_path)
        else:
            typ, default = spec
            if key in user:
                _check_value(sub_path, typ, user[key])
                out[key] = user[key]
            else:
                out[key] = default
    return out


def default_config() -> dict:
    return _merge(_SCHEMA, {})


def validate_config(user: dict) -> dict:
    """Merge a user mapping over the defaults, rejecting unknown keys and
    type mismatches; returns the fully populated configuration."""
    cfg = _merge(_SCHEMA, user)
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg['schema_version']}")
    if cfg["transcription"]["knots"] < 3:
        raise ConfigError("transcription.knots must be at least 3")
    if cfg["simulation"]["method"] not in ("euler", "rk4"):
        raise ConfigError("simulation.method must be 'euler' or 'rk4'")
    if not cfg["simulation"]["dt"] > 0:
        raise ConfigError("simulation.dt must be positive")
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    return validate_config(raw)


def weights_from_config(cfg: dict, slope: float = 0.0) -> CostWeights:
    w = cfg["weights"]
    q = np.empty(layout.NX)
    q[layout.Q] = w["q_joints"]
    q[layout.DQ] = w["q_joint_rates"]
    q[layout.RB] = w["q_rotation"]
    q[layout.PB] = w["q_position"]
    q[layout.OM] = w["q_omega"]
    q[layout.VB] = w["q_velocity"]
    r = np.empty(layout.NU)
    r[layout.UL] = w["r_joint_acc"]
    r[layout.UG] = w["r_grf"]
    discount = 1.0 - float(w["r_thruster_slope_discount"]) * np.sin(slope)
    r[layout.UT] = w["r_thruster"] * max(discount, 0.05)
    return CostWeights(q, r)


def body_from_config(cfg: dict) -> BodyParams:
    b = cfg["body"]
    return BodyParams(
        mass=float(b["mass"]),
        inertia=np.diag(b["inertia_diag"]),
        hip_offsets=np.array(b["hip_offsets"], dtype=float),
        leg_length_bounds=(float(b["leg_length_bounds"][0]), float(b["leg_length_bounds"][1])),
        gravity=np.array(b["gravity"], dtype=float),
    )


def contact_from_config(cfg: dict) -> ContactParams:
    return ContactParams(**{k: float(v) for k, v in cfg["contact"].items()})


def solver_options_from_config(cfg: dict) -> SolverOptions:
    s = cfg["solver"]
    return SolverOptions(
        tol_eq=float(s["tol_eq"]), tol_ineq=float(s["tol_ineq"]),
        step_tol=float(s["step_tol"]), max_outer=int(s["max_outer"]),
        max_inner=int(s["max_inner"]), rho0=float(s["rho0"]),
        rho_growth=float(s["rho_growth"]), fd_step=float(s["fd_step"]),
        polish=bool(s["polish"]),
    )


def instance_from_config(slope: float, cfg: dict) -> WairInstance:
    from .scenario import slope_gait_geometry
    body = body_from_config(cfg)
    bounds = PlanBounds(
        thruster_xy_max=float(cfg["bounds"]["thruster_xy_max"]),
        thruster_z_max=float(cfg["bounds"]["thruster_z_max"]),
        r_min=body.leg_length_bounds[0],
        r_max=body.leg_length_bounds[1],
    )
    g = cfg["gait"]
    base_geo = GaitGeometry(stride_length=float(g["stride_length"]),
                            leg_extension=float(g["leg_extension"]),
                            swing_clearance=float(g["swing_clearance"]))
    weight = body.mass * float(np.linalg.norm(body.gravity))
    geometry = slope_gait_geometry(base_geo, float(slope), weight,
                                   float(cfg["cone_mu_plan"]), bounds)
    return WairInstance(
        terrain=Terrain(float(slope)),
        gait=GaitSchedule(stride_period=float(g["stride_period"])),
        geometry=geometry,
        body=body,
        contact_params=contact_from_config(cfg),
        weights=weights_from_config(cfg, float(slope)),
        bounds=bounds,
        n_knots=int(cfg["transcription"]["knots"]),
        tf_free=bool(cfg["transcription"]["tf_free"]),
        cone_mu=float(cfg["cone_mu"]),
        cone_mu_plan=float(cfg["cone_mu_plan"]),
        strides=int(cfg["strides"]),
        solver_options=solver_options_from_config(cfg),
        sim_dt=float(cfg["simulation"]["dt"]),
    )
