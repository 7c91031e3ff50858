"""Compliant point-foot ground model: spring-damper normal force plus
velocity-dependent (Stribeck) tangential friction, evaluated in a
surface-aligned terrain frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spatial import rot_y

CONE_SENTINEL = -1e30  # pushing up is impossible: F_z <= 0 with F_h > 0

# Defaults give <2 mm static penetration for a 5 kg body; the ground
# stiffness/friction numbers are config-exposed because no single
# consistent set exists upstream.
DEFAULT_K1 = 1e4
DEFAULT_K2 = 1e3
DEFAULT_MU_C = 0.6
DEFAULT_MU_S = 0.7
DEFAULT_MU_V = 0.1
DEFAULT_V_S = 0.05
REPORT_MU = 0.7  # friction-cone coefficient used for all reporting


@dataclass
class ContactParams:
    """Spring, damper and friction coefficients of the ground model."""

    k1: float = DEFAULT_K1
    k2: float = DEFAULT_K2
    mu_c: float = DEFAULT_MU_C
    mu_s: float = DEFAULT_MU_S
    mu_v: float = DEFAULT_MU_V
    v_s: float = DEFAULT_V_S

    def __post_init__(self):
        if not self.k1 > 0.0:
            raise ValueError("spring constant k1 must be positive")
        if self.k2 < 0.0:
            raise ValueError("damping k2 must be non-negative")
        if not self.v_s > 0.0:
            raise ValueError("Stribeck velocity v_s must be positive")
        if not self.mu_c > 0.0:
            raise ValueError("Coulomb coefficient mu_c must be positive")
        if self.mu_v < 0.0:
            raise ValueError("viscous coefficient mu_v must be non-negative")

    def kernel_args(self):
        return (self.k1, self.k2, self.mu_c, self.mu_s, self.mu_v, self.v_s)


@dataclass
class Terrain:
    """Flat surface of known slope, inclined about the world y-axis.

    The terrain frame's x-axis points up-slope, z along the surface
    normal; in world coordinates the surface climbs toward +x.
    """

    slope: float = 0.0  # rad

    def __post_init__(self):
        if not 0.0 <= self.slope <= np.pi / 3:
            raise ValueError("slope must lie in [0, 60 deg]")

    @property
    def world_to_terrain_matrix(self) -> np.ndarray:
        return rot_y(self.slope)

    @property
    def up_slope_world(self) -> np.ndarray:
        """World-frame unit vector pointing up the slope."""
        return np.array([np.cos(self.slope), 0.0, np.sin(self.slope)])

    @property
    def normal_world(self) -> np.ndarray:
        return np.array([-np.sin(self.slope), 0.0, np.cos(self.slope)])


def world_to_terrain(p: np.ndarray, terrain: Terrain) -> np.ndarray:
    """Rotate a world-frame vector into surface-aligned coordinates."""
    return rot_y(terrain.slope) @ np.asarray(p, dtype=float)


def terrain_to_world(p: np.ndarray, terrain: Terrain) -> np.ndarray:
    return rot_y(terrain.slope).T @ np.asarray(p, dtype=float)


def stribeck_coefficient(v: float, params: ContactParams) -> float:
    """Friction coefficient at tangential speed v.

    Equals mu_s at rest and decays exponentially toward mu_c with the
    squared speed over the Stribeck velocity.
    """
    return params.mu_c - (params.mu_c - params.mu_s) * np.exp(-(v * v) / (params.v_s * params.v_s))


def ground_force(p_f: np.ndarray, v_f: np.ndarray, params: ContactParams) -> np.ndarray:
    """Terrain-frame contact force at one foot.

    Zero above the surface. In contact, the normal force is the spring-
    damper response clamped at zero (the ground cannot pull), and each
    tangential axis gets -s * u_z * sgn(v) - mu_v * v with sgn(0) = 0.
    """
    p_f = np.asarray(p_f, dtype=float)
    v_f = np.asarray(v_f, dtype=float)
    if p_f[2] > 0.0:
        return np.zeros(3)
    uz = max(-params.k1 * p_f[2] - params.k2 * v_f[2], 0.0)
    out = np.empty(3)
    out[2] = uz
    for j in (0, 1):
        s = stribeck_coefficient(v_f[j], params)
        out[j] = -s * uz * np.sign(v_f[j]) - params.mu_v * v_f[j]
    return out


def friction_cone_margin(u_g: np.ndarray, mu: float) -> float:
    """mu * F_z - F_h for a surface-frame contact force; positive inside the cone.

    Zero force is vacuously feasible (swing foot); a force with F_z <= 0
    but nonzero tangential component gets a large negative sentinel.
    """
    u_g = np.asarray(u_g, dtype=float)
    fh = float(np.hypot(u_g[0], u_g[1]))
    fz = float(u_g[2])
    if fz <= 0.0 and fh > 0.0:
        return CONE_SENTINEL
    return mu * fz - fh
