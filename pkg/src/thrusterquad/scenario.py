"""Incline-running scenario assembly and the plan -> simulate -> validate
pipeline.

A two-contact trot (diagonal pairs in alternating stance) climbs a slope
at constant reference speed with the torso pitched parallel to the
surface. The planner treats stance GRFs and the thruster force as
decision inputs subject to friction-cone and box constraints; the
simulator then replays planned joint/thruster inputs through the contact
law to produce validation metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import collocation, kernels, layout, solver
from .collocation import (CostWeights, GoalSpec, PlanBounds, ReferenceTrajectory,
                          Transcription)
from .contact import REPORT_MU, ContactParams, Terrain
from .model import BodyParams, leg_vector
from .simulate import rollout
from .solver import NlpProblem, SolveReport, SolverOptions

DIAGONAL_PAIRS = ((0, 3), (1, 2))


@dataclass
class GaitSchedule:
    """Two-contact trot: diagonal pairs alternate stance every half stride."""

    stride_period: float = 0.8

    def __post_init__(self):
        if not self.stride_period > 0.0:
            raise ValueError("stride period must be positive")

    def stance_flags(self, t: float) -> np.ndarray:
        """Boolean stance mask over legs at time t; always two legs."""
        phase = (t / self.stride_period) % 1.0
        pair = DIAGONAL_PAIRS[0] if phase < 0.5 else DIAGONAL_PAIRS[1]
        out = np.zeros(4, dtype=bool)
        out[list(pair)] = True
        return out


@dataclass
class GaitGeometry:
    """Reference geometry of one stride.

    foot_shift moves every nominal foothold up-slope so the support line
    stays under the gravity + thruster resultant on inclines.
    """

    stride_length: float = 0.15
    leg_extension: float = 0.3
    swing_clearance: float = 0.05
    foot_shift: float = 0.0


def slope_gait_geometry(base: GaitGeometry, slope: float, weight: float,
                        cone_mu_plan: float, bounds: PlanBounds) -> GaitGeometry:
    """Slope-adjusted stride geometry.

    The body crouches with slope, and the foothold centroid shifts
    up-slope far enough that, with a feed-forward thruster inside its box
    pushing up-slope, both stance normals stay positive and the leg
    tangential load sits inside the planning cone.
    """
    sa, ca = np.sin(slope), np.cos(slope)
    r0 = base.leg_extension * (1.0 - 0.25 * sa)
    d_max = 0.35 * r0
    x_ff = bounds.thruster_xy_max * sa  # world-x feed-forward share
    h0 = weight * sa - x_ff * ca        # leg tangential load at wz = 0
    n0 = weight * ca + x_ff * sa        # leg normal load at wz = 0
    ride = 0.8 * cone_mu_plan
    wz = 0.0
    den_cone = sa - ride * ca
    if h0 > ride * n0 and den_cone > 0.0:
        wz = max(wz, (h0 - ride * n0) / den_cone)
    den_pitch = r0 * sa - d_max * ca
    if h0 * r0 > d_max * n0 and den_pitch > 0.0:
        wz = max(wz, (h0 * r0 - d_max * n0) / den_pitch)
    wz = min(wz, 0.9 * bounds.thruster_z_max)
    h = h0 - wz * sa
    n = n0 - wz * ca
    shift = h * r0 / max(n, 0.1 * weight * ca) if slope > 0.0 else 0.0
    return GaitGeometry(base.stride_length, r0, base.swing_clearance,
                        min(max(shift, 0.0), d_max))


@dataclass
class WairInstance:
    """One slope-climbing problem: terrain, gait, reference, weights, bounds."""

    terrain: Terrain
    gait: GaitSchedule
    geometry: GaitGeometry
    body: BodyParams
    contact_params: ContactParams
    weights: CostWeights
    bounds: PlanBounds
    n_knots: int = 21
    tf_free: bool = False
    cone_mu: float = REPORT_MU      # reporting/validation coefficient
    cone_mu_plan: float = 0.55      # planning rides this tighter cone
    strides: int = 1
    solver_options: SolverOptions = field(default_factory=SolverOptions)
    sim_dt: float = 1e-3

    @property
    def knot_times(self) -> np.ndarray:
        return np.linspace(0.0, self.gait.stride_period, self.n_knots)

    @property
    def climb_velocity(self) -> np.ndarray:
        return (self.geometry.stride_length / self.gait.stride_period) * self.terrain.up_slope_world


@dataclass
class WairMetrics:
    """Per-slope outcome of plan + validation replay."""

    slope_deg: float
    status: str
    iterations: int
    final_cost: float
    max_defect: float
    min_cone_margin: float          # planned stance GRFs, terrain frame
    min_swing_clearance: float      # planned swing feet above the surface
    peak_stance_grf: float          # planned, leg-force proxy
    peak_joint_acc: float
    thruster_impulse: float
    climb_distance_plan: float
    climb_distance_replay: float
    displacement_error: float       # |plan climb - stride| / stride
    replay_min_cone_margin: float
    replay_peak_grf: float
    grf_divergence: float           # max |replay - plan| / peak planned
    grf_divergence_flagged: bool

    CSV_FIELDS = (
        "slope_deg", "status", "iterations", "final_cost", "max_defect",
        "min_cone_margin", "min_swing_clearance", "peak_stance_grf",
        "peak_joint_acc", "thruster_impulse", "climb_distance_plan",
        "climb_distance_replay", "displacement_error",
        "replay_min_cone_margin", "replay_peak_grf", "grf_divergence",
        "grf_divergence_flagged",
    )

    def to_row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


def default_weights() -> CostWeights:
    q = np.empty(layout.NX)
    q[layout.Q] = 50.0
    q[layout.DQ] = 5.0
    q[layout.RB] = 10.0
    q[layout.PB] = 50.0
    q[layout.OM] = 1.0
    q[layout.VB] = 5.0
    r = np.empty(layout.NU)
    r[layout.UL] = 1e-3
    r[layout.UG] = 1e-4
    r[layout.UT] = 1e-3
    return CostWeights(q, r)


def _smooth_step(s):
    """C1 swing progress profile with zero end velocities."""
    return s - np.sin(2.0 * np.pi * s) / (2.0 * np.pi)


def _foot_path_terrain(instance: WairInstance, i: int, t: float) -> np.ndarray:
    """Terrain-frame foot position of leg i along the reference stride.

    Stance feet stay planted; swing feet advance one stride length with a
    sin^2 clearance arc, touching down with zero velocity.
    """
    geo = instance.geometry
    T = instance.gait.stride_period
    L = geo.stride_length
    hip = instance.body.hip_offsets[i]
    pair_a = i in DIAGONAL_PAIRS[0]
    tau = (t % T) / T
    x0 = hip[0] + geo.foot_shift + np.floor(t / T) * L
    if pair_a:
        if tau < 0.5:  # stance, planted a quarter stride ahead of the hip
            x = x0 + L / 4.0
            z = 0.0
        else:
            s = (tau - 0.5) * 2.0
            x = x0 + L / 4.0 + L * _smooth_step(s)
            z = geo.swing_clearance * np.sin(np.pi * s) ** 2
    else:
        if tau < 0.5:  # swing toward the half-stride touchdown point
            s = tau * 2.0
            x = x0 - L / 4.0 + L * _smooth_step(s)
            z = geo.swing_clearance * np.sin(np.pi * s) ** 2
        else:
            x = x0 + 3.0 * L / 4.0
            z = 0.0
    return np.array([x, hip[1], z])


def _reference_state(instance: WairInstance, t: float) -> np.ndarray:
    """Flat reference state at time t: constant-velocity climb with the
    torso slope-aligned and legs from inverse kinematics of the foot path."""
    terr = instance.terrain
    geo = instance.geometry
    Rt = terr.world_to_terrain_matrix          # world -> terrain
    Rb = Rt.T                                  # body axes == terrain axes
    v_t = np.array([geo.stride_length / instance.gait.stride_period, 0.0, 0.0])
    p_t = np.array([0.0, 0.0, geo.leg_extension]) + v_t * t

    x = np.zeros(layout.NX)
    layout.rotation_to_state(x, Rb)
    x[layout.PB] = Rt.T @ p_t
    x[layout.VB] = Rt.T @ v_t
    # joints: d is the hip->foot vector, identical in terrain and body frames
    eps = 1e-5
    for i in range(4):
        hip = instance.body.hip_offsets[i]
        q3 = np.empty((3, 3))
        for c, tc in enumerate((t - eps, t, t + eps)):
            foot = _foot_path_terrain(instance, i, tc)
            d = foot - (p_t + v_t * (tc - t) + hip)
            r = np.linalg.norm(d)
            gamma = np.arcsin(np.clip(d[1] / r, -1.0, 1.0))
            phi = np.arctan2(-d[0], -d[2])
            q3[c] = (phi, gamma, r)
        sl = layout.leg_q(i)
        x[sl] = q3[1]
        x[12 + sl.start:12 + sl.stop] = (q3[2] - q3[0]) / (2.0 * eps)
    return x


def _reference_joint_acc(instance: WairInstance, t: float) -> np.ndarray:
    """Second difference of the reference joint path (guess for u_L)."""
    eps = 1e-4
    qm = _reference_state(instance, t - eps)[layout.Q]
    q0 = _reference_state(instance, t)[layout.Q]
    qp = _reference_state(instance, t + eps)[layout.Q]
    return (qp - 2.0 * q0 + qm) / (eps * eps)


def _quasi_static_inputs(instance: WairInstance, x_ref: np.ndarray,
                         stance: np.ndarray) -> np.ndarray:
    """Weight-supporting GRF/thruster split at one knot.

    Minimum weighted-norm force distribution achieving exact torso force
    and torque balance, with the cost's input penalties as weights. When
    a stance foot lands outside the planning friction cone the solve is
    repeated with that foot riding the cone (a linear row, since the
    tangential direction is known) and the thruster picking up the rest;
    a thruster component exceeding its box gets a stiffer weight and one
    more pass. Keeps the initial guess feasible even on steep slopes.
    """
    body = instance.body
    bounds = instance.bounds
    R = layout.rotation_from_state(x_ref)
    Rt = instance.terrain.world_to_terrain_matrix
    legs = np.flatnonzero(stance)
    n_c = len(legs)
    A = np.zeros((6, 3 * n_c + 3))
    for c, i in enumerate(legs):
        l = body.hip_offsets[i] + leg_vector(x_ref[layout.leg_q(i)])
        A[0:3, 3 * c:3 * c + 3] = np.eye(3)
        A[3:6, 3 * c:3 * c + 3] = _skew(l) @ R.T
    A[0:3, 3 * n_c:] = np.eye(3)
    b = np.concatenate([-body.mass * body.gravity, np.zeros(3)])
    w = np.concatenate([np.full(3 * n_c, float(instance.weights.r[layout.UG][0])),
                        np.full(3, float(instance.weights.r[layout.UT][0]))])
    w = np.maximum(w, 1e-8)
    box = np.array([bounds.thruster_xy_max, bounds.thruster_xy_max, bounds.thruster_z_max])
    ride = 0.8 * instance.cone_mu_plan
    cone_rows = []

    def solve(rows, weights):
        Afull = np.vstack([A] + rows) if rows else A
        bfull = np.concatenate([b, np.zeros(len(rows))])
        Winv = 1.0 / weights
        AW = Afull * Winv[None, :]
        kkt = AW @ Afull.T + 1e-12 * np.eye(Afull.shape[0])
        return Winv * (Afull.T @ np.linalg.solve(kkt, bfull))

    sol = solve(cone_rows, w)
    for c in range(n_c):
        f_t = Rt @ sol[3 * c:3 * c + 3]
        if np.hypot(f_t[0], f_t[1]) > ride * max(f_t[2], 0.0):
            # ride the cone along the measured tangential direction
            fh = max(np.hypot(f_t[0], f_t[1]), 1e-12)
            t_hat = np.array([f_t[0] / fh, f_t[1] / fh, 0.0])
            row = np.zeros((1, 3 * n_c + 3))
            row[0, 3 * c:3 * c + 3] = (t_hat - ride * np.array([0.0, 0.0, 1.0])) @ Rt
            cone_rows.append(row)
    if cone_rows:
        sol = solve(cone_rows, w)
        over = np.abs(sol[3 * n_c:]) > box
        if np.any(over):
            w2 = w.copy()
            ratio = np.abs(sol[3 * n_c:]) / box
            w2[3 * n_c:] *= np.where(over, 16.0 * ratio * ratio, 1.0)
            sol = solve(cone_rows, w2)

    u = np.zeros(layout.NU)
    for c, i in enumerate(legs):
        u[layout.foot_u(i)] = sol[3 * c:3 * c + 3]
    u[layout.UT] = np.clip(sol[3 * n_c:], -box, box)
    return u


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _clamped_spline_slopes(q: np.ndarray, h: float, m0: float, mN: float) -> np.ndarray:
    """Knot slopes of the clamped C2 cubic spline through q (uniform grid)."""
    n = q.size
    m = np.empty(n)
    m[0], m[-1] = m0, mN
    if n <= 2:
        return m
    # Thomas algorithm on the interior tridiagonal system (1, 4, 1)
    rhs = 3.0 * (q[2:] - q[:-2]) / h
    rhs[0] -= m0
    rhs[-1] -= mN
    k = n - 2
    cp = np.empty(k)
    dp = np.empty(k)
    cp[0] = 1.0 / 4.0
    dp[0] = rhs[0] / 4.0
    for i in range(1, k):
        den = 4.0 - cp[i - 1]
        cp[i] = 1.0 / den
        dp[i] = (rhs[i] - dp[i - 1]) / den
    m[k] = dp[k - 1]
    for i in range(k - 2, -1, -1):
        m[i + 1] = dp[i] - cp[i] * m[i + 2]
    return m


def _spline_accelerations(q: np.ndarray, m: np.ndarray, h: float) -> np.ndarray:
    """Knot accelerations of the Hermite spline (piecewise linear by C2)."""
    u = np.empty(q.size)
    c2 = -3.0 * q[:-1] - 2.0 * h * m[:-1] + 3.0 * q[1:] - h * m[1:]
    c3 = 2.0 * q[:-1] + h * m[:-1] - 2.0 * q[1:] + h * m[1:]
    u[:-1] = 2.0 * c2 / (h * h)
    u[-1] = (2.0 * c2[-1] + 6.0 * c3[-1]) / (h * h)
    return u


def build_reference(instance: WairInstance) -> ReferenceTrajectory:
    times = instance.knot_times
    stance = np.array([instance.gait.stance_flags(t) for t in times])
    states = np.array([_reference_state(instance, t) for t in times])
    return ReferenceTrajectory(states, stance)


def build_instance(slope: float, config: dict | None = None) -> WairInstance:
    """Assemble a slope-climbing instance from a configuration mapping.

    `slope` is in radians; config keys follow the scenario config schema
    (see the config module); omitted keys fall back to defaults.
    """
    from .config import instance_from_config, default_config
    cfg = default_config() if config is None else config
    return instance_from_config(slope, cfg)


@dataclass
class DecisionLayout:
    """Flat decision vector: all knot states, then all knot inputs, then
    optionally t_f."""

    n_knots: int
    tf_free: bool = False

    def state_slice(self, k: int) -> slice:
        return slice(layout.NX * k, layout.NX * (k + 1))

    def input_slice(self, k: int) -> slice:
        off = layout.NX * self.n_knots
        return slice(off + layout.NU * k, off + layout.NU * (k + 1))

    @property
    def tf_index(self) -> int:
        return (layout.NX + layout.NU) * self.n_knots

    @property
    def n_total(self) -> int:
        return (layout.NX + layout.NU) * self.n_knots + (1 if self.tf_free else 0)


class WairNlp:
    """Collocation transcription of one instance as solver callbacks.

    Equality residuals: midpoint defects plus boundary rows. Inequality
    residuals: the block rows of collocation.inequality_constraints.
    Analytic gradients are supplied both as dense Jacobians and as
    transpose-product callbacks; finite differences of the same
    callbacks serve as the test oracle.
    """

    def __init__(self, instance: WairInstance):
        self.instance = instance
        self.lay = DecisionLayout(instance.n_knots, instance.tf_free)
        self.refs = build_reference(instance)
        self.stance = self.refs.stance
        self.times0 = instance.knot_times
        self.x_start = self.refs.states[0].copy()
        self.kernel_args = instance.body.kernel_args()
        self.Rt = instance.terrain.world_to_terrain_matrix
        # pin final body position and velocity; joint periodicity is left to
        # the tracking cost so boundary-active feet keep their lift freedom
        goal_pairs = {}
        xg = _reference_state(instance, instance.gait.stride_period)
        for idx in range(33, 36):
            goal_pairs[idx] = xg[idx]
        for idx in range(39, 42):
            goal_pairs[idx] = xg[idx]
        self.goal = GoalSpec.from_indices(goal_pairs)
        self.n_eq = (instance.n_knots - 1) * layout.NX + layout.NX + int(self.goal.mask.sum())

    # ---- decision vector helpers -------------------------------------

    def knot_times(self, Y):
        if self.lay.tf_free:
            tf = Y[self.lay.tf_index]
            return self.times0 * (tf / self.times0[-1])
        return self.times0

    def unpack(self, Y):
        N = self.lay.n_knots
        X = Y[:layout.NX * N].reshape(N, layout.NX)
        U = Y[layout.NX * N:(layout.NX + layout.NU) * N].reshape(N, layout.NU)
        return X, U

    def pack(self, X, U, tf=None):
        parts = [X.reshape(-1), U.reshape(-1)]
        if self.lay.tf_free:
            parts.append([self.times0[-1] if tf is None else tf])
        return np.concatenate(parts)

    def transcription(self, Y) -> Transcription:
        X, U = self.unpack(Y)
        return Transcription(self.knot_times(Y), X.copy(), U.copy(), self.stance,
                             self.lay.tf_free)

    # ---- initial guess -----------------------------------------------

    def initial_guess(self) -> np.ndarray:
        """Reference trajectory with spline-consistent leg motion and a
        quasi-static force split.

        Joint rates/accelerations come from a clamped cubic spline through
        the knot joint values, which makes every leg-block defect vanish
        identically (piecewise-cubic state, piecewise-linear input), so
        the solver starts working on the torso rows only.
        """
        inst = self.instance
        X = self.refs.states.copy()
        U = np.zeros((inst.n_knots, layout.NU))
        h = float(self.times0[1] - self.times0[0])
        for j in range(12):
            q = X[:, j]
            m0, mN = X[0, 12 + j], X[-1, 12 + j]
            slopes = _clamped_spline_slopes(q, h, m0, mN)
            X[:, 12 + j] = slopes
            U[:, j] = _spline_accelerations(q, slopes, h)
        for k in range(inst.n_knots):
            U[k] += _quasi_static_inputs(inst, X[k], self.stance[k])
        return self.pack(X, U)

    # ---- cost ----------------------------------------------------------

    def cost(self, Y) -> float:
        X, U = self.unpack(Y)
        e = self.refs.states - X
        q, r = self.instance.weights.q, self.instance.weights.r
        return float(((e * e) @ q).sum() + ((U[:-1] * U[:-1]) @ r).sum())

    def cost_grad(self, Y) -> np.ndarray:
        X, U = self.unpack(Y)
        g = np.zeros(self.lay.n_total)
        N = self.lay.n_knots
        q, r = self.instance.weights.q, self.instance.weights.r
        gx = 2.0 * (X - self.refs.states) * q[None, :]
        g[:layout.NX * N] = gx.reshape(-1)
        gu = np.zeros_like(U)
        gu[:-1] = 2.0 * U[:-1] * r[None, :]
        g[layout.NX * N:(layout.NX + layout.NU) * N] = gu.reshape(-1)
        return g

    def cost_hess_diag(self, Y) -> np.ndarray:
        N = self.lay.n_knots
        d = np.zeros(self.lay.n_total)
        q, r = self.instance.weights.q, self.instance.weights.r
        d[:layout.NX * N] = np.tile(2.0 * q, N)
        du = np.tile(2.0 * r, N)
        du[-layout.NU:] = 0.0
        d[layout.NX * N:(layout.NX + layout.NU) * N] = du
        return d

    # ---- equality residuals --------------------------------------------

    def eq(self, Y) -> np.ndarray:
        X, U = self.unpack(Y)
        tt = self.knot_times(Y)
        F = kernels.dynamics_batch(X, U, *self.kernel_args)
        Xc, Xdotc, Uc = collocation.midpoint_arrays(X, U, F, tt)
        defects = kernels.dynamics_batch(Xc, Uc, *self.kernel_args) - Xdotc
        r0 = X[0] - self.x_start
        rf = (X[-1] - self.goal.values)[self.goal.mask]
        return np.concatenate([defects.reshape(-1), r0, rf])

    def _defect_blocks(self, Y):
        """Per-interval Jacobian ingredients for the defect rows."""
        X, U = self.unpack(Y)
        tt = self.knot_times(Y)
        h = np.diff(tt)
        F = kernels.dynamics_batch(X, U, *self.kernel_args)
        Xc, Xdotc, Uc = collocation.midpoint_arrays(X, U, F, tt)
        A, B = kernels.dynamics_jacobians_batch(X, U, *self.kernel_args)
        Ac, Bc = kernels.dynamics_jacobians_batch(Xc, Uc, *self.kernel_args)
        return h, A, B, Ac, Bc

    def eq_jacT_prod(self, Y, w) -> np.ndarray:
        """J_eq(Y)^T w assembled from interval-local blocks."""
        N = self.lay.n_knots
        nd = (N - 1) * layout.NX
        h, A, B, Ac, Bc = self._defect_blocks(Y)
        W = w[:nd].reshape(N - 1, layout.NX)
        a = np.einsum("kji,kj->ki", Ac, W)                  # Ac^T w per interval
        gX = np.zeros((N, layout.NX))
        gU = np.zeros((N, layout.NU))
        hh = h[:, None]
        # x_j slot: (0.5 I + h/8 A_j)^T a + 1.5/h w + 0.25 A_j^T w
        t_j = np.einsum("kji,kj->ki", A[:-1], hh / 8.0 * a + 0.25 * W)
        gX[:-1] += 0.5 * a + t_j + 1.5 / hh * W
        t_j1 = np.einsum("kji,kj->ki", A[1:], -hh / 8.0 * a + 0.25 * W)
        gX[1:] += 0.5 * a + t_j1 - 1.5 / hh * W
        bw = np.einsum("kji,kj->ki", Bc, W)
        t_uj = np.einsum("kji,kj->ki", B[:-1], hh / 8.0 * a + 0.25 * W)
        gU[:-1] += 0.5 * bw + t_uj
        t_uj1 = np.einsum("kji,kj->ki", B[1:], -hh / 8.0 * a + 0.25 * W)
        gU[1:] += 0.5 * bw + t_uj1
        # boundary rows
        w0 = w[nd:nd + layout.NX]
        gX[0] += w0
        wg = w[nd + layout.NX:]
        gX[-1][self.goal.mask] += wg
        out = self.pack(gX, gU, tf=0.0)
        if self.lay.tf_free:
            out[self.lay.tf_index] = self._tf_column(Y) @ w
        return out

    def _tf_column(self, Y):
        delta = 1e-6 * max(1.0, abs(Y[self.lay.tf_index]))
        Yp = Y.copy()
        Ym = Y.copy()
        Yp[self.lay.tf_index] += delta
        Ym[self.lay.tf_index] -= delta
        return (self.eq(Yp) - self.eq(Ym)) / (2.0 * delta)

    def eq_jac(self, Y) -> np.ndarray:
        """Dense equality Jacobian (used by the feasibility polish and tests)."""
        N = self.lay.n_knots
        nd = (N - 1) * layout.NX
        h, A, B, Ac, Bc = self._defect_blocks(Y)
        J = np.zeros((self.n_eq, self.lay.n_total))
        eye = np.eye(layout.NX)
        for j in range(N - 1):
            rows = slice(j * layout.NX, (j + 1) * layout.NX)
            AcA_j = Ac[j] @ ((h[j] / 8.0) * A[j])
            AcA_j1 = Ac[j] @ ((h[j] / 8.0) * A[j + 1])
            J[rows, self.lay.state_slice(j)] = 0.5 * Ac[j] + AcA_j + (1.5 / h[j]) * eye + 0.25 * A[j]
            J[rows, self.lay.state_slice(j + 1)] = 0.5 * Ac[j] - AcA_j1 - (1.5 / h[j]) * eye + 0.25 * A[j + 1]
            J[rows, self.lay.input_slice(j)] = Ac[j] @ ((h[j] / 8.0) * B[j]) + 0.5 * Bc[j] + 0.25 * B[j]
            J[rows, self.lay.input_slice(j + 1)] = -Ac[j] @ ((h[j] / 8.0) * B[j + 1]) + 0.5 * Bc[j] + 0.25 * B[j + 1]
        J[nd:nd + layout.NX, self.lay.state_slice(0)] = np.eye(layout.NX)
        gidx = np.flatnonzero(self.goal.mask)
        last = self.lay.state_slice(N - 1)
        for r, gi in enumerate(gidx):
            J[nd + layout.NX + r, last.start + gi] = 1.0
        if self.lay.tf_free:
            J[:, self.lay.tf_index] = self._tf_column(Y)
        return J

    # ---- inequality residuals -------------------------------------------

    def ineq(self, Y) -> np.ndarray:
        return collocation.inequality_constraints(
            self.transcription(Y), self.instance.cone_mu_plan, self.instance.bounds,
            self.instance.terrain, self.instance.body)

    def ineq_jacT_prod(self, Y, w) -> np.ndarray:
        X, U = self.unpack(Y)
        N = self.lay.n_knots
        stance = self.stance
        Rt = self.Rt
        gX = np.zeros((N, layout.NX))
        gU = np.zeros((N, layout.NU))
        ks, fs = np.nonzero(stance)
        n_st = ks.size
        kw, fw = np.nonzero(~stance)
        n_sw = kw.size
        off = 0
        # cone rows
        ug = U[:, layout.UG].reshape(N, 4, 3)
        for r in range(n_st):
            wr = w[off + r]
            if wr == 0.0:
                continue
            k, i = ks[r], fs[r]
            ft = Rt @ ug[k, i]
            fh = np.hypot(ft[0], ft[1])
            row = self.instance.cone_mu_plan * Rt[2]
            if fh > 0.0:
                row = row - (ft[0] * Rt[0] + ft[1] * Rt[1]) / fh
            gU[k, 12 + 3 * i:15 + 3 * i] += wr * row
        off += n_st
        # stance normal-force rows
        for r in range(n_st):
            wr = w[off + r]
            if wr == 0.0:
                continue
            k, i = ks[r], fs[r]
            gU[k, 12 + 3 * i:15 + 3 * i] += wr * Rt[2]
        off += n_st
        # swing clearance rows
        for r in range(n_sw):
            wr = w[off + r]
            if wr == 0.0:
                continue
            k, i = kw[r], fw[r]
            x = X[k]
            R = layout.rotation_from_state(x)
            q3 = x[layout.leg_q(i)]
            l = self.instance.body.hip_offsets[i] + leg_vector(q3)
            gX[k, layout.PB] += wr * Rt[2]
            gX[k, layout.RB] += wr * np.outer(l, Rt[2]).reshape(9)
            phi, gamma, rr = q3
            cp, sp = np.cos(phi), np.sin(phi)
            cg, sg = np.cos(gamma), np.sin(gamma)
            dl = np.array([
                [-rr * cg * cp, rr * sg * sp, -cg * sp],
                [0.0, rr * cg, sg],
                [rr * cg * sp, rr * sg * cp, -cg * cp],
            ])
            gX[k, layout.leg_q(i)] += wr * (Rt[2] @ R @ dl)
        off += n_sw
        # thruster box rows: (+-1) on u_T components
        wt = w[off:off + 6 * N].reshape(N, 6)
        gU[:, 24] += wt[:, 1] - wt[:, 0]
        gU[:, 25] += wt[:, 3] - wt[:, 2]
        gU[:, 26] += wt[:, 5] - wt[:, 4]
        off += 6 * N
        # prismatic rows: (+-1) on r coordinates
        wp = w[off:off + 8 * N].reshape(N, 8)
        for i in range(4):
            gX[:, 3 * i + 2] += wp[:, i] - wp[:, 4 + i]
        return self.pack(gX, gU, tf=0.0)

    def ineq_jac(self, Y) -> np.ndarray:
        """Dense inequality Jacobian via transpose products (test use)."""
        g = self.ineq(Y)
        J = np.empty((g.size, self.lay.n_total))
        for r in range(g.size):
            w = np.zeros(g.size)
            w[r] = 1.0
            J[r] = self.ineq_jacT_prod(Y, w)
        return J

    # ---- problem assembly ----------------------------------------------

    def problem(self, guess: np.ndarray | None = None) -> NlpProblem:
        lay = self.lay
        n = lay.n_total
        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        s0 = lay.state_slice(0)
        lb[s0] = ub[s0] = self.x_start
        for k in range(lay.n_knots):
            for i in range(4):
                if not self.stance[k, i]:
                    sl = lay.input_slice(k)
                    lb[sl.start + 12 + 3 * i:sl.start + 15 + 3 * i] = 0.0
                    ub[sl.start + 12 + 3 * i:sl.start + 15 + 3 * i] = 0.0
        scale = np.ones(n)
        for k in range(lay.n_knots):
            sl = lay.input_slice(k)
            scale[sl.start:sl.start + 12] = 10.0
            scale[sl.start + 12:sl.start + 27] = 25.0
        if lay.tf_free:
            tf0 = self.times0[-1]
            lb[lay.tf_index] = 0.2 * tf0
            ub[lay.tf_index] = 3.0 * tf0
        x0 = self.initial_guess() if guess is None else np.asarray(guess, dtype=float)
        return NlpProblem(
            n=n, cost=self.cost, x0=x0, eq=self.eq, ineq=self.ineq,
            cost_grad=self.cost_grad, eq_jac=self.eq_jac, ineq_jac=self.ineq_jac,
            eq_jacT=self.eq_jacT_prod, ineq_jacT=self.ineq_jacT_prod,
            cost_hess_diag=self.cost_hess_diag,
            lb=lb, ub=ub, x_scale=scale,
            metadata={"decision_layout": lay, "start_state": self.x_start},
        )


def plan(instance: WairInstance, warm_from: Transcription | None = None):
    """Transcribe and solve one instance.

    Returns (transcription, report); non-convergence is reported, never
    raised, and the partial transcription is retained. warm_from seeds
    the solve from a previous plan's decision variables, shifted to the
    new start state.
    """
    nlp = WairNlp(instance)
    problem = nlp.problem()
    if warm_from is not None and warm_from.n_knots == instance.n_knots:
        prev_Y = nlp.pack(warm_from.states, warm_from.inputs,
                          tf=warm_from.t_f if instance.tf_free else None)
        problem = nlp.problem(guess=solver.warm_start(prev_Y, problem))
    Y, report = solver.solve(problem, instance.solver_options)
    return nlp.transcription(Y), report


def _interp_inputs(times, U, t):
    """Row-wise linear interpolation of knot inputs."""
    t = min(max(t, times[0]), times[-1])
    j = min(int(np.searchsorted(times, t, side="right") - 1), len(times) - 2)
    s = (t - times[j]) / (times[j + 1] - times[j])
    return U[j] + s * (U[j + 1] - U[j])


def validate(transcription: Transcription, instance: WairInstance,
             report: SolveReport | None = None) -> WairMetrics:
    """Replay planned joint/thruster inputs through the contact law and
    compare against the plan."""
    inst = instance
    terr = inst.terrain
    Rt = terr.world_to_terrain_matrix
    N = transcription.n_knots
    times = transcription.knot_times
    X, U = transcription.states, transcription.inputs
    stance = transcription.stance

    # plan-side quantities
    dyn = batched_dynamics(inst.body)
    defects = collocation.collocation_defects(transcription, dyn)
    max_defect = float(np.abs(defects).max())
    ug_t = U[:, layout.UG].reshape(N, 4, 3) @ Rt.T
    cones = [collocation_margin(ug_t[k, i], inst.cone_mu)
             for k in range(N) for i in range(4) if stance[k, i]]
    min_cone = float(min(cones)) if cones else np.inf
    feet_t = kernels.foot_positions_batch(X, inst.body.hip_offsets) @ Rt.T
    clear = feet_t[~stance][:, 2]
    min_clear = float(clear.min()) if clear.size else np.inf
    grf_norms = np.linalg.norm(U[:, layout.UG].reshape(N, 4, 3), axis=2)
    peak_grf = float(grf_norms[stance].max()) if stance.any() else 0.0
    peak_joint_acc = float(np.abs(U[:, layout.UL]).max())
    uT_norm = np.linalg.norm(U[:, layout.UT], axis=1)
    impulse = float(np.trapezoid(uT_norm, times))
    d_hat = terr.up_slope_world
    climb_plan = float((X[-1, layout.PB] - X[0, layout.PB]) @ d_hat)
    stride = inst.geometry.stride_length
    disp_err = abs(climb_plan - stride) / stride

    # replay through the contact law
    schedule = _replay_schedule(times, U)
    traj = rollout(X[0], schedule, inst.sim_dt, float(times[-1]), inst.body,
                   terrain=terr, contact_params=inst.contact_params,
                   method="euler", contact_mode="closed", cone_mu=inst.cone_mu)
    climb_replay = float((traj.states[-1, layout.PB] - traj.states[0, layout.PB]) @ d_hat)
    loaded = traj.grf_terrain[:, :, 2] > 0.0
    margins = [collocation_margin(traj.grf_terrain[k, i], inst.cone_mu)
               for k, i in zip(*np.nonzero(loaded))]
    replay_min_cone = float(min(margins)) if margins else np.inf
    replay_norms = np.linalg.norm(traj.grf_world, axis=2)
    replay_peak = float(replay_norms.max())
    plan_grf_interp = np.array([_interp_inputs(times, U, t)[layout.UG]
                                for t in traj.times]).reshape(-1, 4, 3)
    dev = np.linalg.norm(traj.grf_world - plan_grf_interp, axis=2)
    ref_peak = max(peak_grf, 1e-9)
    divergence = float(dev.max() / ref_peak)

    return WairMetrics(
        slope_deg=float(np.degrees(terr.slope)),
        status=report.status if report else "unknown",
        iterations=report.iterations if report else 0,
        final_cost=report.final_cost if report else np.nan,
        max_defect=max_defect,
        min_cone_margin=min_cone,
        min_swing_clearance=min_clear,
        peak_stance_grf=peak_grf,
        peak_joint_acc=peak_joint_acc,
        thruster_impulse=impulse,
        climb_distance_plan=climb_plan,
        climb_distance_replay=climb_replay,
        displacement_error=disp_err,
        replay_min_cone_margin=replay_min_cone,
        replay_peak_grf=replay_peak,
        grf_divergence=divergence,
        grf_divergence_flagged=bool(divergence > 0.2),
    )


def collocation_margin(f_terrain, mu):
    """Cone margin without the reporting sentinel (solver-side form)."""
    return mu * f_terrain[2] - np.hypot(f_terrain[0], f_terrain[1])


def _replay_schedule(times, U):
    def schedule(t):
        u = _interp_inputs(times, U, t)
        out = u.copy()
        out[layout.UG] = 0.0  # closed-loop contact supplies the GRFs
        return out
    return schedule


def batched_dynamics(body: BodyParams):
    """Dynamics callback accepting single states or knot batches."""
    args = body.kernel_args()

    def dyn(X, U):
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        if X.ndim == 1:
            return kernels.dynamics(X, U, *args)
        return kernels.dynamics_batch(X, U, *args)
    return dyn


def slope_sweep(config: dict | None = None, slopes_deg=None):
    """Plan + validate across the slope set.

    Each slope starts from its own quasi-static guess: the guess already
    encodes the slope's thruster share, which keeps every solve on the
    thruster-assisted branch (cross-slope warm starting tends to drag
    the legs-heavy local optimum of shallow slopes uphill). Per-slope
    failures are isolated into their metrics row.
    """
    from .config import default_config
    cfg = default_config() if config is None else config
    slopes = cfg["slopes_deg"] if slopes_deg is None else list(slopes_deg)
    results = []
    for deg in slopes:
        inst = build_instance(np.radians(float(deg)), cfg)
        try:
            transcription, report = plan(inst)
            metrics = validate(transcription, inst, report)
            results.append((inst, transcription, report, metrics))
        except Exception as exc:  # isolate per-slope failures
            results.append((inst, None, None, _failure_metrics(float(deg), str(exc))))
    return results


def _failure_metrics(slope_deg: float, message: str) -> WairMetrics:
    nan = float("nan")
    return WairMetrics(slope_deg, f"error: {message[:80]}", 0, nan, nan, nan, nan,
                       nan, nan, nan, nan, nan, nan, nan, nan, nan, True)
