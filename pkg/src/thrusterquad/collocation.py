"""Direct-collocation transcription: decision trajectories on a knot grid,
quadratic tracking cost, cubic Hermite interpolants and their defect,
boundary and inequality residuals.

Inputs are piecewise linear between knots; states follow the cubic whose
endpoint values and slopes match the knot states and dynamics, so the
only dynamics constraints left are the midpoint defects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, layout
from .contact import Terrain
from .model import BodyParams

SCHEMA_VERSION = 1


@dataclass
class Transcription:
    """Knot grid with decision states/inputs and per-knot stance flags."""

    knot_times: np.ndarray      # (N,), strictly increasing, starts at 0
    states: np.ndarray          # (N, 42)
    inputs: np.ndarray          # (N, 27)
    stance: np.ndarray          # (N, 4) bool
    tf_free: bool = False

    def __post_init__(self):
        self.knot_times = np.asarray(self.knot_times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.stance = np.asarray(self.stance, dtype=bool)
        if self.knot_times[0] != 0.0 or np.any(np.diff(self.knot_times) <= 0.0):
            raise ValueError("knot times must start at 0 and increase strictly")
        n = len(self.knot_times)
        if self.states.shape != (n, layout.NX) or self.inputs.shape != (n, layout.NU):
            raise ValueError("state/input arrays inconsistent with knot count")
        if self.stance.shape != (n, 4):
            raise ValueError("stance flags must be (N, 4)")

    @property
    def n_knots(self) -> int:
        return len(self.knot_times)

    @property
    def t_f(self) -> float:
        return float(self.knot_times[-1])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "knot_times": self.knot_times.tolist(),
            "states": self.states.tolist(),
            "inputs": self.inputs.tolist(),
            "stance": self.stance.astype(int).tolist(),
            "t_f": self.t_f,
            "tf_free": bool(self.tf_free),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transcription":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported transcription schema: {d.get('schema_version')!r}")
        return cls(np.array(d["knot_times"], dtype=float),
                   np.array(d["states"], dtype=float),
                   np.array(d["inputs"], dtype=float),
                   np.array(d["stance"], dtype=bool),
                   bool(d.get("tf_free", False)))


@dataclass
class CostWeights:
    """Diagonal state/input weights of the tracking cost."""

    q: np.ndarray  # (42,)
    r: np.ndarray  # (27,)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if self.q.shape != (layout.NX,) or self.r.shape != (layout.NU,):
            raise ValueError("weight vectors must match state/input dims")
        if np.any(self.q < 0.0) or np.any(self.r < 0.0):
            raise ValueError("weights must be non-negative")


@dataclass
class ReferenceTrajectory:
    """Knot-sampled state reference and the stance schedule it assumes."""

    states: np.ndarray  # (N, 42)
    stance: np.ndarray  # (N, 4) bool


@dataclass
class GoalSpec:
    """Target values for selected final-state components."""

    mask: np.ndarray    # (42,) bool
    values: np.ndarray  # (42,)

    @classmethod
    def from_indices(cls, pairs: dict[int, float]) -> "GoalSpec":
        mask = np.zeros(layout.NX, dtype=bool)
        values = np.zeros(layout.NX)
        for i, v in pairs.items():
            mask[i] = True
            values[i] = v
        return cls(mask, values)


@dataclass
class PlanBounds:
    """Input and joint-range bounds enforced at every knot."""

    thruster_xy_max: float = 10.0
    thruster_z_max: float = 40.0
    r_min: float = 0.15
    r_max: float = 0.45


def _kahan_sum(terms) -> float:
    total = 0.0
    carry = 0.0
    for t in terms:
        y = t - carry
        s = total + y
        carry = (s - total) - y
        total = s
    return total


def cost(transcription: Transcription, refs: ReferenceTrajectory, weights: CostWeights) -> float:
    """Sum of e_k' Q e_k over all knots plus u_k' R u_k over all but the
    last knot (each interval's input enters once), compensated summation."""
    e = refs.states - transcription.states
    state_terms = (e * e) @ weights.q
    u = transcription.inputs[:-1]
    input_terms = (u * u) @ weights.r
    return _kahan_sum(np.concatenate([state_terms, input_terms]).tolist())


def _interval_index(knot_times: np.ndarray, t: float) -> int:
    if t < knot_times[0] or t > knot_times[-1]:
        raise ValueError(f"t={t} outside [{knot_times[0]}, {knot_times[-1]}]")
    j = int(np.searchsorted(knot_times, t, side="right") - 1)
    return min(j, len(knot_times) - 2)


def input_interpolate(U: np.ndarray, knot_times: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation of knot inputs at time t; exact at knots."""
    j = _interval_index(knot_times, t)
    h = knot_times[j + 1] - knot_times[j]
    s = (t - knot_times[j]) / h
    if s <= 0.0:
        return U[j].copy()
    if s >= 1.0:
        return U[j + 1].copy()
    return U[j] + s * (U[j + 1] - U[j])


def hermite_coefficients(x_j, x_j1, f_j, f_j1, h_j: float):
    """Coefficients of the cubic in sigma = (t - t_j)/h_j matching the
    endpoint values and slopes."""
    x_j = np.asarray(x_j, dtype=float)
    x_j1 = np.asarray(x_j1, dtype=float)
    f_j = np.asarray(f_j, dtype=float)
    f_j1 = np.asarray(f_j1, dtype=float)
    if not h_j > 0.0:
        raise ValueError("interval length must be positive")
    c0 = x_j
    c1 = h_j * f_j
    c2 = -3.0 * x_j - 2.0 * h_j * f_j + 3.0 * x_j1 - h_j * f_j1
    c3 = 2.0 * x_j + h_j * f_j - 2.0 * x_j1 + h_j * f_j1
    return c0, c1, c2, c3


def state_interpolate(transcription: Transcription, dynamics_fn, t: float):
    """Cubic interpolant value and time derivative at t.

    dynamics_fn maps batched (X, U) to state derivatives; at knot times
    the interpolant reproduces the knot state and its dynamics exactly.
    """
    tt = transcription.knot_times
    j = _interval_index(tt, t)
    h = tt[j + 1] - tt[j]
    X = transcription.states[j:j + 2]
    U = transcription.inputs[j:j + 2]
    F = dynamics_fn(X, U)
    c0, c1, c2, c3 = hermite_coefficients(X[0], X[1], F[0], F[1], h)
    s = (t - tt[j]) / h
    x = c0 + s * (c1 + s * (c2 + s * c3))
    xdot = (c1 + s * (2.0 * c2 + 3.0 * s * c3)) / h
    return x, xdot


def midpoint_arrays(X: np.ndarray, U: np.ndarray, F: np.ndarray, knot_times: np.ndarray):
    """Interpolant values/derivatives and inputs at all interval midpoints.

    F holds the dynamics at every knot. Returns (Xc, Xdotc, Uc), each with
    one row per interval.
    """
    h = np.diff(knot_times)[:, None]
    Xc = 0.5 * (X[:-1] + X[1:]) + h * (F[:-1] - F[1:]) / 8.0
    Xdotc = 1.5 * (X[1:] - X[:-1]) / h - 0.25 * (F[:-1] + F[1:])
    Uc = 0.5 * (U[:-1] + U[1:])
    return Xc, Xdotc, Uc


def midpoint_states(transcription: Transcription, F: np.ndarray):
    return midpoint_arrays(transcription.states, transcription.inputs, F,
                           transcription.knot_times)


def collocation_defects(transcription: Transcription, dynamics_fn) -> np.ndarray:
    """Dynamics residual of the interpolant at every interval midpoint,
    flattened to ((N-1) * 42,). Endpoint slope conditions hold by
    construction, so midpoints carry all the dynamics information."""
    F = dynamics_fn(transcription.states, transcription.inputs)
    Xc, Xdotc, Uc = midpoint_states(transcription, F)
    return (dynamics_fn(Xc, Uc) - Xdotc).reshape(-1)


def boundary_residuals(transcription: Transcription, start_state: np.ndarray,
                       goal: GoalSpec) -> np.ndarray:
    """Full initial-state residual plus the selected goal components."""
    r0 = transcription.states[0] - np.asarray(start_state, dtype=float)
    rf = (transcription.states[-1] - goal.values)[goal.mask]
    return np.concatenate([r0, rf])


def inequality_constraints(transcription: Transcription, mu: float,
                           bounds: PlanBounds, terrain: Terrain,
                           body: BodyParams) -> np.ndarray:
    """Feasibility rows over all knots, every entry >= 0 when satisfied.

    Block order: friction-cone margins for stance feet, stance normal
    forces, swing-foot surface clearances, thruster box margins,
    prismatic length margins (terrain-frame quantities throughout).
    Swing GRFs are fixed to zero through variable bounds, not here. Row
    count is constant for a fixed stance schedule.
    """
    Rt = terrain.world_to_terrain_matrix
    N = transcription.n_knots
    stance = transcription.stance
    ug = transcription.inputs[:, layout.UG].reshape(N, 4, 3) @ Rt.T
    feet_t = kernels.foot_positions_batch(transcription.states, body.hip_offsets) @ Rt.T
    uT = transcription.inputs[:, layout.UT]
    r_len = transcription.states[:, layout.Q].reshape(N, 4, 3)[:, :, 2]

    f_st = ug[stance]
    cone = mu * f_st[:, 2] - np.hypot(f_st[:, 0], f_st[:, 1])
    normal = f_st[:, 2]
    clearance = feet_t[~stance][:, 2]
    thruster = np.column_stack([
        bounds.thruster_xy_max - uT[:, 0], uT[:, 0] + bounds.thruster_xy_max,
        bounds.thruster_xy_max - uT[:, 1], uT[:, 1] + bounds.thruster_xy_max,
        bounds.thruster_z_max - uT[:, 2], uT[:, 2] + bounds.thruster_z_max,
    ]).reshape(-1)
    prism = np.column_stack([r_len - bounds.r_min,
                             bounds.r_max - r_len]).reshape(-1)
    return np.concatenate([cone, normal, clearance, thruster, prism])
