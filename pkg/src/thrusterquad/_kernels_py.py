"""Pure-NumPy implementation of the hot kernels.

Mirrors the compiled extension `_kernels` function for function; selected
at import time by `kernels` when the extension is unavailable or when
THRUSTERQUAD_PURE is set. Everything here is a pure function of its
arguments, so callers may evaluate in parallel.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

_E = np.eye(3)
_ESKEW = np.array([
    [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
    [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
    [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
])  # _ESKEW[j] = [e_j]_x


def _skew_batch(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def reorthonormalize3(R, max_iter=10):
    """Polar projection onto SO(3) by iterated averaging with R^-T."""
    det = np.linalg.det(R)
    if not np.isfinite(det) or abs(det) < 0.5:
        raise ValueError(f"matrix too far from SO(3): det={det!r}")
    R = np.array(R, dtype=float)
    for _ in range(max_iter):
        if np.abs(R.T @ R - _E).max() <= 1e-15:
            break
        R = 0.5 * (R + np.linalg.inv(R).T)
    return R


def _rotations(X):
    """(K,42) states -> (K,3,3) body rotation matrices."""
    return X[:, 24:33].reshape(-1, 3, 3).transpose(0, 2, 1)


def _leg_vectors(X, lh):
    """Body-frame hip->foot vectors and COM->foot vectors.

    Returns (lf, l) each (K,4,3) for flat states X (K,42).
    """
    K = X.shape[0]
    q = X[:, 0:12].reshape(K, 4, 3)
    phi, gamma, r = q[..., 0], q[..., 1], q[..., 2]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cgam, sgam = np.cos(gamma), np.sin(gamma)
    lf = np.empty((K, 4, 3))
    lf[..., 0] = -r * cgam * sphi
    lf[..., 1] = r * sgam
    lf[..., 2] = -r * cgam * cphi
    return lf, lf + lh[None, :, :]


def foot_positions_batch(X, lh):
    """World foot positions, (K,4,3)."""
    R = _rotations(X)
    _, l = _leg_vectors(X, lh)
    return X[:, None, 33:36] + np.einsum("kab,kib->kia", R, l)


def foot_velocities_batch(X, lh):
    """World foot velocities including body twist and joint rates, (K,4,3)."""
    K = X.shape[0]
    R = _rotations(X)
    _, l = _leg_vectors(X, lh)
    omega = X[:, 36:39]
    q = X[:, 0:12].reshape(K, 4, 3)
    dq = X[:, 12:24].reshape(K, 4, 3)
    phi, gamma, r = q[..., 0], q[..., 1], q[..., 2]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cgam, sgam = np.cos(gamma), np.sin(gamma)
    # d(lf)/dt chained through (phi, gamma, r) rates
    ldot = np.empty((K, 4, 3))
    ldot[..., 0] = (-r * cgam * cphi) * dq[..., 0] + (r * sgam * sphi) * dq[..., 1] - cgam * sphi * dq[..., 2]
    ldot[..., 1] = (r * cgam) * dq[..., 1] + sgam * dq[..., 2]
    ldot[..., 2] = (r * cgam * sphi) * dq[..., 0] + (r * sgam * cphi) * dq[..., 1] - cgam * cphi * dq[..., 2]
    rel = np.cross(omega[:, None, :], l) + ldot
    return X[:, None, 39:42] + np.einsum("kab,kib->kia", R, rel)


def foot_positions(x, lh):
    return foot_positions_batch(x[None, :], lh)[0]


def foot_velocities(x, lh):
    return foot_velocities_batch(x[None, :], lh)[0]


def dynamics_batch(X, U, m, inertia, inertia_inv, lh, gravity):
    """Batched flat-state derivative, (K,42)."""
    K = X.shape[0]
    F = np.empty((K, 42))
    F[:, 0:12] = X[:, 12:24]
    F[:, 12:24] = U[:, 0:12]
    R = _rotations(X)
    omega = X[:, 36:39]
    Rdot = R @ _skew_batch(omega)
    F[:, 24:33] = Rdot.transpose(0, 2, 1).reshape(K, 9)
    F[:, 33:36] = X[:, 39:42]
    _, l = _leg_vectors(X, lh)
    ug = U[:, 12:24].reshape(K, 4, 3)
    w = np.einsum("kba,kib->kia", R, ug)  # body-frame foot forces
    tau = np.cross(l, w).sum(axis=1)
    Jw = omega @ inertia.T
    F[:, 36:39] = (tau - np.cross(omega, Jw)) @ inertia_inv.T
    F[:, 39:42] = gravity[None, :] + (ug.sum(axis=1) + U[:, 24:27]) / m
    return F


def dynamics(x, u, m, inertia, inertia_inv, lh, gravity):
    return dynamics_batch(x[None, :], u[None, :], m, inertia, inertia_inv, lh, gravity)[0]


def dynamics_jacobians_batch(X, U, m, inertia, inertia_inv, lh, gravity):
    """Analytic Jacobians (dF/dx, dF/du) of `dynamics_batch`.

    Returns (A, B) with shapes (K,42,42) and (K,42,27).
    """
    K = X.shape[0]
    A = np.zeros((K, 42, 42))
    B = np.zeros((K, 42, 27))
    idx12 = np.arange(12)
    A[:, idx12, 12 + idx12] = 1.0
    B[:, 12 + idx12, idx12] = 1.0
    idx3 = np.arange(3)
    A[:, 33 + idx3, 39 + idx3] = 1.0
    B[:, 39 + idx3, 24 + idx3] = 1.0 / m

    R = _rotations(X)
    omega = X[:, 36:39]
    S = _skew_batch(omega)
    # d(Rdot col j)/d(rb col k) = S[k,j] I3 ; d(Rdot col j)/d omega = -R [e_j]_x
    for j in range(3):
        for k in range(3):
            for d in range(3):
                A[:, 24 + 3 * j + d, 24 + 3 * k + d] = S[:, k, j]
        A[:, 24 + 3 * j:27 + 3 * j, 36:39] = -R @ _ESKEW[j]

    q = X[:, 0:12].reshape(K, 4, 3)
    phi, gamma, r = q[..., 0], q[..., 1], q[..., 2]
    cphi, sphi = np.cos(phi), np.sin(phi)
    cgam, sgam = np.cos(gamma), np.sin(gamma)
    lf = np.empty((K, 4, 3))
    lf[..., 0] = -r * cgam * sphi
    lf[..., 1] = r * sgam
    lf[..., 2] = -r * cgam * cphi
    l = lf + lh[None, :, :]
    ug = U[:, 12:24].reshape(K, 4, 3)
    w = np.einsum("kba,kib->kia", R, ug)

    dl = np.empty((K, 4, 3, 3))  # d l / d (phi, gamma, r)
    dl[..., 0, 0] = -r * cgam * cphi
    dl[..., 1, 0] = 0.0
    dl[..., 2, 0] = r * cgam * sphi
    dl[..., 0, 1] = r * sgam * sphi
    dl[..., 1, 1] = r * cgam
    dl[..., 2, 1] = r * sgam * cphi
    dl[..., 0, 2] = -cgam * sphi
    dl[..., 1, 2] = sgam
    dl[..., 2, 2] = -cgam * cphi

    for i in range(4):
        # omega-dot rows: joint angles move the GRF lever arm
        dtau_dq = np.cross(dl[:, i].transpose(0, 2, 1), w[:, i, None, :]).transpose(0, 2, 1)
        A[:, 36:39, 3 * i:3 * i + 3] = np.einsum("ab,kbc->kac", inertia_inv, dtau_dq)
        # omega-dot rows vs rotation entries: tau_i = l x (R^T ug)
        lx = _skew_batch(l[:, i])
        for k in range(3):
            blk = np.einsum("ka,kb->kab", lx[:, :, k], ug[:, i])
            A[:, 36:39, 24 + 3 * k:27 + 3 * k] += np.einsum("ab,kbc->kac", inertia_inv, blk)
        B[:, 36:39, 12 + 3 * i:15 + 3 * i] = np.einsum("ab,kbc->kac", inertia_inv, lx @ R.transpose(0, 2, 1))
        B[:, 39 + idx3, 12 + 3 * i + idx3] = 1.0 / m

    Jw = omega @ inertia.T
    dgyro = _skew_batch(Jw) - S @ inertia
    A[:, 36:39, 36:39] = np.einsum("ab,kbc->kac", inertia_inv, dgyro)
    return A, B


def dynamics_jacobians(x, u, m, inertia, inertia_inv, lh, gravity):
    A, B = dynamics_jacobians_batch(x[None, :], u[None, :], m, inertia, inertia_inv, lh, gravity)
    return A[0], B[0]


def contact_forces_batch(X, lh, slope, k1, k2, mu_c, mu_s, mu_v, v_s):
    """Spring-damper normal force with velocity-dependent tangential friction.

    Evaluated in the terrain frame (slope rotation about y); the normal
    force is clamped at zero so the ground never pulls. Returns
    (world (K,4,3), terrain (K,4,3)).
    """
    ca, sa = np.cos(slope), np.sin(slope)
    Rt = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
    p = foot_positions_batch(X, lh) @ Rt.T
    v = foot_velocities_batch(X, lh) @ Rt.T
    below = p[..., 2] <= 0.0
    uz = np.where(below, np.maximum(-k1 * p[..., 2] - k2 * v[..., 2], 0.0), 0.0)
    ut = np.empty_like(p)
    ut[..., 2] = uz
    for j in (0, 1):
        vj = v[..., j]
        s = mu_c - (mu_c - mu_s) * np.exp(-(vj * vj) / (v_s * v_s))
        ut[..., j] = np.where(below, -s * uz * np.sign(vj) - mu_v * vj, 0.0)
    return ut @ Rt, ut


def contact_forces(x, lh, slope, k1, k2, mu_c, mu_s, mu_v, v_s):
    w, t = contact_forces_batch(x[None, :], lh, slope, k1, k2, mu_c, mu_s, mu_v, v_s)
    return w[0], t[0]


def _energies(x, m, inertia, gravity):
    v = x[39:42]
    om = x[36:39]
    K = 0.5 * m * v @ v + 0.5 * om @ inertia @ om
    V = -m * (x[33:36] @ gravity)
    return K, V


def _project_rotation(x):
    R = x[24:33].reshape(3, 3).T
    R = reorthonormalize3(R)
    x[24:33] = R.T.reshape(9)


def qn_update(Hinv, B, s, y, fresh):
    """Damped BFGS update of the inverse/direct Hessian pair in place.

    Returns True when the update was applied (curvature acceptable after
    Powell damping), False when skipped.
    """
    y = np.array(y, dtype=float)
    Bs = B @ s
    sBs = s @ Bs
    sy = s @ y
    if sBs > 0.0 and sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        y = theta * y + (1.0 - theta) * Bs
        sy = s @ y
    if not sy > 1e-14 * max(1.0, float(np.abs(s).max() * np.abs(y).max())):
        return False
    if fresh:
        h0 = sy / (y @ y)
        if np.isfinite(h0) and h0 > 0.0:
            Hinv[:] = 0.0
            B[:] = 0.0
            np.fill_diagonal(Hinv, h0)
            np.fill_diagonal(B, 1.0 / h0)
            Bs = s / h0
            sBs = s @ Bs
    B += np.outer(y, y) / sy
    B -= np.outer(Bs, Bs) / sBs
    rho_i = 1.0 / sy
    Hy = Hinv @ y
    yHy = y @ Hy
    Hinv += (rho_i * rho_i * yHy + rho_i) * np.outer(s, s)
    Hinv -= rho_i * (np.outer(s, Hy) + np.outer(Hy, s))
    return True


def rollout(x0, U_sched, dt, method, closed,
            m, inertia, inertia_inv, lh, gravity,
            slope, k1, k2, mu_c, mu_s, mu_v, v_s):
    """Integrate n steps with per-step rotation reprojection.

    U_sched is (n+1, 27), sampled on the step grid; stage inputs are
    linearly interpolated. In closed mode ground forces are recomputed
    from the current stage state, overriding the scheduled GRF slots.

    Returns (states (n+1,42), grf_world (n+1,4,3), grf_terrain (n+1,4,3),
    energies (n+1,2), bad_step) with bad_step = -1 on success, else the
    index of the first step producing a non-finite state.
    """
    n = U_sched.shape[0] - 1
    states = np.empty((n + 1, 42))
    grf_w = np.zeros((n + 1, 4, 3))
    grf_t = np.zeros((n + 1, 4, 3))
    energies = np.empty((n + 1, 2))
    x = np.array(x0, dtype=float)
    cp = (slope, k1, k2, mu_c, mu_s, mu_v, v_s)
    ca, sa = np.cos(slope), np.sin(slope)
    Rt = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])

    def eval_u(x_stage, u_sched):
        u = np.array(u_sched)
        if closed:
            gw, _ = contact_forces(x_stage, lh, *cp)
            u[12:24] = gw.reshape(12)
        return u

    def f(x_stage, u_sched):
        return dynamics(x_stage, eval_u(x_stage, u_sched), m, inertia, inertia_inv, lh, gravity)

    bad_step = -1
    for k in range(n + 1):
        states[k] = x
        if closed:
            grf_w[k], grf_t[k] = contact_forces(x, lh, *cp)
        else:
            grf_w[k] = U_sched[k, 12:24].reshape(4, 3)
            grf_t[k] = grf_w[k] @ Rt.T
        energies[k] = _energies(x, m, inertia, gravity)
        if k == n:
            break
        u0, u1 = U_sched[k], U_sched[k + 1]
        if method == 0:
            x = x + dt * f(x, u0)
        else:
            um = 0.5 * (u0 + u1)
            k1s = f(x, u0)
            k2s = f(x + 0.5 * dt * k1s, um)
            k3s = f(x + 0.5 * dt * k2s, um)
            k4s = f(x + dt * k3s, u1)
            x = x + (dt / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
        if not np.all(np.isfinite(x)):
            bad_step = k
            states[k + 1:] = np.nan
            break
        _project_rotation(x)
    return states, grf_w, grf_t, energies, bad_step
