"""Minimal 3-D vector/matrix kernel with SO(3) utilities."""

from __future__ import annotations

import numpy as np

ORTHONORMALITY_TOL = 1e-9
DET_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Return S = [v]_x with S @ w = v x w for any w; S.T == -S."""
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -vz, vy],
                     [vz, 0.0, -vx],
                     [-vy, vx, 0.0]])


def rot_x(angle: float) -> np.ndarray:
    """Proper rotation about the x-axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, c, -s],
                     [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    """Proper rotation about the y-axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s],
                     [0.0, 1.0, 0.0],
                     [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    """Proper rotation about the z-axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0],
                     [s, c, 0.0],
                     [0.0, 0.0, 1.0]])


def rotation_derivative(R: np.ndarray, omega_body: np.ndarray) -> np.ndarray:
    """Rdot = R [omega]_x for body-frame angular velocity omega."""
    return R @ skew(omega_body)


def is_rotation(R: np.ndarray, tol: float = ORTHONORMALITY_TOL) -> bool:
    """Check orthonormality and det(R) = +1 within tol."""
    if not np.all(np.isfinite(R)):
        return False
    err = np.abs(R.T @ R - np.eye(3)).max()
    return err <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def reorthonormalize(R: np.ndarray, max_iter: int = 10) -> np.ndarray:
    """Project a near-rotation matrix back onto SO(3).

    Iterated averaging R <- (R + R^-T)/2 converges quadratically to the
    polar factor for inputs near SO(3) and leaves exact rotations
    untouched. Raises ValueError when |det| < 0.5 (no nearby rotation).

    Counters the orthonormality drift of explicit integration steps.
    """
    R = np.array(R, dtype=float)
    det = np.linalg.det(R)
    if not np.isfinite(det) or abs(det) < 0.5:
        raise ValueError(f"matrix too far from SO(3): det={det!r}")
    for _ in range(max_iter):
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err <= 1e-15:
            break
        R = 0.5 * (R + np.linalg.inv(R).T)
    return R
