"""Reduced-order quadruped model: massless legs, all mass in the torso.

Each leg has a frontal hip angle phi, a sagittal hip angle gamma and a
prismatic length r; joint accelerations are direct inputs. Ground
reaction forces act at the point feet, the thruster resultant acts at
the COM, so the torso is a single rigid body driven by those wrenches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, layout
from .spatial import is_rotation, skew

DEFAULT_MASS = 5.0
DEFAULT_INERTIA_DIAG = (0.0981867, 0.0844185, 0.164599)
# fore/aft +-x, left/right +-y; legs ordered FL, FR, HL, HR
DEFAULT_HIP_OFFSETS = (
    (0.15, 0.07, 0.0),
    (0.15, -0.07, 0.0),
    (-0.15, 0.07, 0.0),
    (-0.15, -0.07, 0.0),
)
DEFAULT_LEG_BOUNDS = (0.15, 0.45)
GRAVITY = (0.0, 0.0, -9.81)


@dataclass
class BodyParams:
    """Torso mass properties, hip geometry and gravity."""

    mass: float = DEFAULT_MASS
    inertia: np.ndarray = field(default_factory=lambda: np.diag(DEFAULT_INERTIA_DIAG))
    hip_offsets: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_HIP_OFFSETS))
    leg_length_bounds: tuple[float, float] = DEFAULT_LEG_BOUNDS
    gravity: np.ndarray = field(default_factory=lambda: np.array(GRAVITY))

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.hip_offsets = np.asarray(self.hip_offsets, dtype=float).reshape(4, 3)
        self.gravity = np.asarray(self.gravity, dtype=float)
        if not self.mass > 0.0:
            raise ValueError("mass must be positive")
        if self.inertia.shape != (3, 3) or np.abs(self.inertia - self.inertia.T).max() > 1e-12:
            raise ValueError("inertia must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0.0):
            raise ValueError("inertia must be positive definite")
        r_min, r_max = self.leg_length_bounds
        if not (r_min > 0.0 and r_max > r_min):
            raise ValueError("need 0 < r_min < r_max")
        self.inertia_inv = np.linalg.inv(self.inertia)

    def kernel_args(self):
        """Argument tuple consumed by the kernel backend."""
        return (self.mass, self.inertia, self.inertia_inv, self.hip_offsets, self.gravity)


@dataclass
class LegJointState:
    """Joint coordinates (phi, gamma, r) and rates for all four legs."""

    phi: np.ndarray
    gamma: np.ndarray
    r: np.ndarray
    phi_dot: np.ndarray
    gamma_dot: np.ndarray
    r_dot: np.ndarray

    @classmethod
    def zeros(cls, r=0.3):
        return cls(np.zeros(4), np.zeros(4), np.full(4, float(r)),
                   np.zeros(4), np.zeros(4), np.zeros(4))

    def pack(self):
        """(q_L, dq_L) in per-leg (phi, gamma, r) order."""
        q = np.column_stack([self.phi, self.gamma, self.r]).reshape(12)
        dq = np.column_stack([self.phi_dot, self.gamma_dot, self.r_dot]).reshape(12)
        return q, dq

    @classmethod
    def unpack(cls, q, dq):
        q = np.asarray(q, dtype=float).reshape(4, 3)
        dq = np.asarray(dq, dtype=float).reshape(4, 3)
        return cls(q[:, 0].copy(), q[:, 1].copy(), q[:, 2].copy(),
                   dq[:, 0].copy(), dq[:, 1].copy(), dq[:, 2].copy())


@dataclass
class BodyState:
    """Torso pose and twist: world position/velocity, rotation, body-frame rate."""

    p: np.ndarray
    R: np.ndarray
    v: np.ndarray
    omega: np.ndarray

    @classmethod
    def at_rest(cls, p=(0.0, 0.0, 0.0), R=None):
        R = np.eye(3) if R is None else np.asarray(R, dtype=float)
        return cls(np.asarray(p, dtype=float), R, np.zeros(3), np.zeros(3))


@dataclass
class HromState:
    """Full model state; flattens to the 42-vector the simulator and planner use."""

    legs: LegJointState
    body: BodyState

    def flatten(self) -> np.ndarray:
        x = np.empty(layout.NX)
        q, dq = self.legs.pack()
        x[layout.Q] = q
        x[layout.DQ] = dq
        layout.rotation_to_state(x, self.body.R)
        x[layout.PB] = self.body.p
        x[layout.OM] = self.body.omega
        x[layout.VB] = self.body.v
        return x

    @classmethod
    def unflatten(cls, x: np.ndarray) -> "HromState":
        x = np.asarray(x, dtype=float)
        legs = LegJointState.unpack(x[layout.Q], x[layout.DQ])
        body = BodyState(x[layout.PB].copy(), layout.rotation_from_state(x).copy(),
                         x[layout.VB].copy(), x[layout.OM].copy())
        return cls(legs, body)

    def validate(self):
        x = self.flatten()
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite state")
        if not is_rotation(self.body.R):
            raise ValueError("body rotation violates SO(3) invariants")


@dataclass
class InputVector:
    """Joint accelerations, per-foot world GRFs and the thruster resultant."""

    u_L: np.ndarray
    u_g: np.ndarray  # (4,3), rows zero for swing feet
    u_T: np.ndarray

    @classmethod
    def zeros(cls):
        return cls(np.zeros(12), np.zeros((4, 3)), np.zeros(3))

    def flatten(self) -> np.ndarray:
        u = np.empty(layout.NU)
        u[layout.UL] = self.u_L
        u[layout.UG] = np.asarray(self.u_g).reshape(12)
        u[layout.UT] = self.u_T
        return u

    @classmethod
    def unflatten(cls, u: np.ndarray) -> "InputVector":
        u = np.asarray(u, dtype=float)
        return cls(u[layout.UL].copy(), u[layout.UG].reshape(4, 3).copy(), u[layout.UT].copy())


def foot_position(x: np.ndarray, params: BodyParams, i: int) -> np.ndarray:
    """World position of foot i: hip offset plus the rotated leg vector."""
    return kernels.foot_positions(np.asarray(x, dtype=float), params.hip_offsets)[i]


def foot_velocity(x: np.ndarray, params: BodyParams, i: int) -> np.ndarray:
    """World velocity of foot i (body translation, body rotation, joint rates)."""
    return kernels.foot_velocities(np.asarray(x, dtype=float), params.hip_offsets)[i]


def grf_jacobian(x: np.ndarray, params: BodyParams, i: int) -> np.ndarray:
    """d(foot velocity)/d[v_b, omega_b], shape (3,6).

    The transpose maps a world foot force to the generalized torso wrench:
    identity on the force slot, lever-arm cross product on the moment slot.
    """
    x = np.asarray(x, dtype=float)
    R = layout.rotation_from_state(x)
    q = x[layout.leg_q(i)]
    lf = leg_vector(q)
    l = params.hip_offsets[i] + lf
    out = np.zeros((3, 6))
    out[:, 0:3] = np.eye(3)
    out[:, 3:6] = -R @ skew(l)
    return out


def leg_vector(q3: np.ndarray) -> np.ndarray:
    """Body-frame hip->foot vector for one leg's (phi, gamma, r)."""
    phi, gamma, r = q3
    cg, sg = np.cos(gamma), np.sin(gamma)
    cp, sp = np.cos(phi), np.sin(phi)
    return np.array([-r * cg * sp, r * sg, -r * cg * cp])


def dynamics(x: np.ndarray, u: np.ndarray, params: BodyParams) -> np.ndarray:
    """Flat state derivative of the reduced-order model.

    Torso: M [a_b; domega] + [-m g; omega x J omega] = sum_i B_g_i u_g_i + B_T u_T
    with M = blockdiag(m I, J). Legs integrate ddq_L = u_L independently;
    the rotation block evolves as Rdot = R [omega]_x.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite dynamics input")
    return kernels.dynamics(x, u, *params.kernel_args())


def dynamics_jacobians(x: np.ndarray, u: np.ndarray, params: BodyParams):
    """Analytic (df/dx, df/du) for the flat dynamics."""
    return kernels.dynamics_jacobians(np.asarray(x, dtype=float), np.asarray(u, dtype=float),
                                      *params.kernel_args())


def energies(x: np.ndarray, params: BodyParams) -> tuple[float, float]:
    """Kinetic and potential energy of the torso (legs are massless)."""
    x = np.asarray(x, dtype=float)
    v = x[layout.VB]
    om = x[layout.OM]
    kin = 0.5 * params.mass * v @ v + 0.5 * om @ params.inertia @ om
    pot = -params.mass * (x[layout.PB] @ params.gravity)
    return float(kin), float(pot)
