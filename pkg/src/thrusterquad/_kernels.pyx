# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementation of the hot kernels.

Function-for-function mirror of `_kernels_py`; the flat state/input
layout is hard-coded here and cross-checked by the backend-agreement
tests.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, fabs, hypot, sin, sqrt

cnp.import_array()

BACKEND = "compiled"


# ---------------------------------------------------------------------------
# small dense helpers (row-major 3x3)

cdef inline void _mat3_vec(const double* M, const double* v, double* out) noexcept nogil:
    out[0] = M[0] * v[0] + M[1] * v[1] + M[2] * v[2]
    out[1] = M[3] * v[0] + M[4] * v[1] + M[5] * v[2]
    out[2] = M[6] * v[0] + M[7] * v[1] + M[8] * v[2]


cdef inline void _mat3_tvec(const double* M, const double* v, double* out) noexcept nogil:
    out[0] = M[0] * v[0] + M[3] * v[1] + M[6] * v[2]
    out[1] = M[1] * v[0] + M[4] * v[1] + M[7] * v[2]
    out[2] = M[2] * v[0] + M[5] * v[1] + M[8] * v[2]


cdef inline void _cross(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline void _unpack_R(const double* x, double* R) noexcept nogil:
    # state stores the three columns of R stacked
    cdef int a, b
    for b in range(3):
        for a in range(3):
            R[3 * a + b] = x[24 + 3 * b + a]


cdef inline void _leg_vector(const double* q3, double* lf) noexcept nogil:
    cdef double cp = cos(q3[0]), sp = sin(q3[0])
    cdef double cg = cos(q3[1]), sg = sin(q3[1])
    cdef double r = q3[2]
    lf[0] = -r * cg * sp
    lf[1] = r * sg
    lf[2] = -r * cg * cp


cdef inline void _leg_vector_dot(const double* q3, const double* dq3, double* ld) noexcept nogil:
    cdef double cp = cos(q3[0]), sp = sin(q3[0])
    cdef double cg = cos(q3[1]), sg = sin(q3[1])
    cdef double r = q3[2]
    ld[0] = (-r * cg * cp) * dq3[0] + (r * sg * sp) * dq3[1] - cg * sp * dq3[2]
    ld[1] = (r * cg) * dq3[1] + sg * dq3[2]
    ld[2] = (r * cg * sp) * dq3[0] + (r * sg * cp) * dq3[1] - cg * cp * dq3[2]


cdef void _foot_positions_core(const double* x, const double* lh, double* out) noexcept nogil:
    cdef double R[9]
    cdef double l[3]
    cdef double w[3]
    cdef int i, a
    _unpack_R(x, R)
    for i in range(4):
        _leg_vector(x + 3 * i, l)
        for a in range(3):
            l[a] += lh[3 * i + a]
        _mat3_vec(R, l, w)
        for a in range(3):
            out[3 * i + a] = x[33 + a] + w[a]


cdef void _foot_velocities_core(const double* x, const double* lh, double* out) noexcept nogil:
    cdef double R[9]
    cdef double l[3]
    cdef double ld[3]
    cdef double rel[3]
    cdef double w[3]
    cdef int i, a
    _unpack_R(x, R)
    for i in range(4):
        _leg_vector(x + 3 * i, l)
        for a in range(3):
            l[a] += lh[3 * i + a]
        _leg_vector_dot(x + 3 * i, x + 12 + 3 * i, ld)
        _cross(x + 36, l, rel)
        for a in range(3):
            rel[a] += ld[a]
        _mat3_vec(R, rel, w)
        for a in range(3):
            out[3 * i + a] = x[39 + a] + w[a]


cdef void _dynamics_core(const double* x, const double* u, double m,
                         const double* J, const double* Jinv, const double* lh,
                         const double* g, double* out) noexcept nogil:
    cdef double R[9]
    cdef double S[9]
    cdef double l[3]
    cdef double wb[3]
    cdef double tau[3]
    cdef double Jw[3]
    cdef double gyro[3]
    cdef double tmp[3]
    cdef double fsum[3]
    cdef int i, a, b
    cdef const double* omega = x + 36

    for i in range(12):
        out[i] = x[12 + i]
        out[12 + i] = u[i]
    _unpack_R(x, R)
    # Rdot = R [omega]_x, stored back column-stacked
    S[0] = 0.0; S[1] = -omega[2]; S[2] = omega[1]
    S[3] = omega[2]; S[4] = 0.0; S[5] = -omega[0]
    S[6] = -omega[1]; S[7] = omega[0]; S[8] = 0.0
    for a in range(3):
        for b in range(3):
            out[24 + 3 * b + a] = (R[3 * a] * S[b] + R[3 * a + 1] * S[3 + b]
                                   + R[3 * a + 2] * S[6 + b])
    out[33] = x[39]; out[34] = x[40]; out[35] = x[41]

    tau[0] = tau[1] = tau[2] = 0.0
    fsum[0] = fsum[1] = fsum[2] = 0.0
    for i in range(4):
        _leg_vector(x + 3 * i, l)
        for a in range(3):
            l[a] += lh[3 * i + a]
        _mat3_tvec(R, u + 12 + 3 * i, wb)   # body-frame foot force
        _cross(l, wb, tmp)
        for a in range(3):
            tau[a] += tmp[a]
            fsum[a] += u[12 + 3 * i + a]
    _mat3_vec(J, omega, Jw)
    _cross(omega, Jw, gyro)
    for a in range(3):
        tmp[a] = tau[a] - gyro[a]
    _mat3_vec(Jinv, tmp, tau)
    out[36] = tau[0]; out[37] = tau[1]; out[38] = tau[2]
    for a in range(3):
        out[39 + a] = g[a] + (fsum[a] + u[24 + a]) / m


cdef void _jacobians_core(const double* x, const double* u, double m,
                          const double* J, const double* Jinv, const double* lh,
                          double* A, double* B) noexcept nogil:
    # A is 42x42 row-major, B is 42x27 row-major, both pre-zeroed
    cdef double R[9]
    cdef double S[9]
    cdef double l[3]
    cdef double wb[3]
    cdef double dl[9]
    cdef double col[3]
    cdef double tmp[3]
    cdef double tmp2[3]
    cdef double lx[9]
    cdef double M1[9]
    cdef double M2[9]
    cdef int i, a, b, k, d
    cdef const double* omega = x + 36
    cdef double cp, sp, cg, sg, r

    for i in range(12):
        A[i * 42 + 12 + i] = 1.0
        B[(12 + i) * 27 + i] = 1.0
    for a in range(3):
        A[(33 + a) * 42 + 39 + a] = 1.0
        B[(39 + a) * 27 + 24 + a] = 1.0 / m

    _unpack_R(x, R)
    S[0] = 0.0; S[1] = -omega[2]; S[2] = omega[1]
    S[3] = omega[2]; S[4] = 0.0; S[5] = -omega[0]
    S[6] = -omega[1]; S[7] = omega[0]; S[8] = 0.0
    # rotation rows: d(Rdot col b)/d(rb col k) = S[k,b] I3
    for b in range(3):
        for k in range(3):
            for d in range(3):
                A[(24 + 3 * b + d) * 42 + 24 + 3 * k + d] = S[3 * k + b]
    # d(Rdot col b)/d omega = -R [e_b]_x, written column by column
    for a in range(3):
        A[(24 + a) * 42 + 36 + 1] = -R[3 * a + 2]
        A[(24 + a) * 42 + 36 + 2] = R[3 * a + 1]
        A[(27 + a) * 42 + 36 + 0] = R[3 * a + 2]
        A[(27 + a) * 42 + 36 + 2] = -R[3 * a + 0]
        A[(30 + a) * 42 + 36 + 0] = -R[3 * a + 1]
        A[(30 + a) * 42 + 36 + 1] = R[3 * a + 0]

    for i in range(4):
        cp = cos(x[3 * i]); sp = sin(x[3 * i])
        cg = cos(x[3 * i + 1]); sg = sin(x[3 * i + 1])
        r = x[3 * i + 2]
        _leg_vector(x + 3 * i, l)
        for a in range(3):
            l[a] += lh[3 * i + a]
        _mat3_tvec(R, u + 12 + 3 * i, wb)
        # dl columns: d l / d(phi, gamma, r)
        dl[0] = -r * cg * cp; dl[1] = r * sg * sp; dl[2] = -cg * sp
        dl[3] = 0.0;          dl[4] = r * cg;      dl[5] = sg
        dl[6] = r * cg * sp;  dl[7] = r * sg * cp; dl[8] = -cg * cp
        # omega rows vs joint angles: Jinv @ ((dl col) x wb)
        for b in range(3):
            col[0] = dl[b]; col[1] = dl[3 + b]; col[2] = dl[6 + b]
            _cross(col, wb, tmp)
            _mat3_vec(Jinv, tmp, tmp2)
            for a in range(3):
                A[(36 + a) * 42 + 3 * i + b] = tmp2[a]
        # omega rows vs rotation entries: block k = Jinv @ ([l]x e_k) ug^T
        lx[0] = 0.0; lx[1] = -l[2]; lx[2] = l[1]
        lx[3] = l[2]; lx[4] = 0.0; lx[5] = -l[0]
        lx[6] = -l[1]; lx[7] = l[0]; lx[8] = 0.0
        for k in range(3):
            col[0] = lx[k]; col[1] = lx[3 + k]; col[2] = lx[6 + k]
            _mat3_vec(Jinv, col, tmp)
            for a in range(3):
                for b in range(3):
                    A[(36 + a) * 42 + 24 + 3 * k + b] += tmp[a] * u[12 + 3 * i + b]
        # B omega rows: Jinv [l]x R^T
        for a in range(3):
            for b in range(3):
                M1[3 * a + b] = lx[3 * a] * R[3 * b] + lx[3 * a + 1] * R[3 * b + 1] + lx[3 * a + 2] * R[3 * b + 2]
        for a in range(3):
            for b in range(3):
                M2[3 * a + b] = Jinv[3 * a] * M1[b] + Jinv[3 * a + 1] * M1[3 + b] + Jinv[3 * a + 2] * M1[6 + b]
        for a in range(3):
            for b in range(3):
                B[(36 + a) * 27 + 12 + 3 * i + b] = M2[3 * a + b]
            B[(39 + a) * 27 + 12 + 3 * i + a] = 1.0 / m

    # omega rows vs omega: Jinv ([J w]_x - [w]_x J)
    _mat3_vec(J, omega, tmp)  # Jw
    M1[0] = 0.0; M1[1] = -tmp[2]; M1[2] = tmp[1]
    M1[3] = tmp[2]; M1[4] = 0.0; M1[5] = -tmp[0]
    M1[6] = -tmp[1]; M1[7] = tmp[0]; M1[8] = 0.0
    for a in range(3):
        for b in range(3):
            M1[3 * a + b] -= S[3 * a] * J[b] + S[3 * a + 1] * J[3 + b] + S[3 * a + 2] * J[6 + b]
    for a in range(3):
        for b in range(3):
            A[(36 + a) * 42 + 36 + b] = (Jinv[3 * a] * M1[b] + Jinv[3 * a + 1] * M1[3 + b]
                                         + Jinv[3 * a + 2] * M1[6 + b])


cdef int _reorthonormalize_core(double* R) noexcept nogil:
    """Polar projection via iterated averaging; returns 0 on near-singular."""
    cdef double inv[9]
    cdef double det, err, s
    cdef int it, a, b
    for it in range(10):
        # max |R^T R - I|
        err = 0.0
        for a in range(3):
            for b in range(3):
                s = R[a] * R[b] + R[3 + a] * R[3 + b] + R[6 + a] * R[6 + b]
                if a == b:
                    s -= 1.0
                if fabs(s) > err:
                    err = fabs(s)
        if err <= 1e-15:
            return 1
        det = (R[0] * (R[4] * R[8] - R[5] * R[7])
               - R[1] * (R[3] * R[8] - R[5] * R[6])
               + R[2] * (R[3] * R[7] - R[4] * R[6]))
        if not (fabs(det) >= 0.5):
            return 0
        inv[0] = (R[4] * R[8] - R[5] * R[7]) / det
        inv[1] = (R[2] * R[7] - R[1] * R[8]) / det
        inv[2] = (R[1] * R[5] - R[2] * R[4]) / det
        inv[3] = (R[5] * R[6] - R[3] * R[8]) / det
        inv[4] = (R[0] * R[8] - R[2] * R[6]) / det
        inv[5] = (R[2] * R[3] - R[0] * R[5]) / det
        inv[6] = (R[3] * R[7] - R[4] * R[6]) / det
        inv[7] = (R[1] * R[6] - R[0] * R[7]) / det
        inv[8] = (R[0] * R[4] - R[1] * R[3]) / det
        # R <- (R + inv(R)^T)/2
        for a in range(3):
            for b in range(3):
                R[3 * a + b] = 0.5 * (R[3 * a + b] + inv[3 * b + a])
    return 1


cdef void _contact_core(const double* x, const double* lh, double ca, double sa,
                        double k1, double k2, double mu_c, double mu_s,
                        double mu_v, double v_s, double* out_w, double* out_t) noexcept nogil:
    cdef double p[12]
    cdef double v[12]
    cdef double pt[3]
    cdef double vt[3]
    cdef double f[3]
    cdef double uz, vj, s, sgn
    cdef int i, j
    _foot_positions_core(x, lh, p)
    _foot_velocities_core(x, lh, v)
    for i in range(4):
        # terrain frame: rotation by the slope about y
        pt[0] = ca * p[3 * i] + sa * p[3 * i + 2]
        pt[1] = p[3 * i + 1]
        pt[2] = -sa * p[3 * i] + ca * p[3 * i + 2]
        vt[0] = ca * v[3 * i] + sa * v[3 * i + 2]
        vt[1] = v[3 * i + 1]
        vt[2] = -sa * v[3 * i] + ca * v[3 * i + 2]
        if pt[2] > 0.0:
            for j in range(3):
                out_w[3 * i + j] = 0.0
                out_t[3 * i + j] = 0.0
            continue
        uz = -k1 * pt[2] - k2 * vt[2]
        if uz < 0.0:
            uz = 0.0
        for j in range(2):
            vj = vt[j]
            s = mu_c - (mu_c - mu_s) * exp(-(vj * vj) / (v_s * v_s))
            sgn = 0.0
            if vj > 0.0:
                sgn = 1.0
            elif vj < 0.0:
                sgn = -1.0
            f[j] = -s * uz * sgn - mu_v * vj
        f[2] = uz
        out_t[3 * i] = f[0]
        out_t[3 * i + 1] = f[1]
        out_t[3 * i + 2] = f[2]
        out_w[3 * i] = ca * f[0] - sa * f[2]
        out_w[3 * i + 1] = f[1]
        out_w[3 * i + 2] = sa * f[0] + ca * f[2]


# ---------------------------------------------------------------------------
# python-facing wrappers

def foot_positions(x, lh):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((4, 3))
    _foot_positions_core(&xv[0], &lhv[0, 0], &out[0, 0])
    return out


def foot_positions_batch(X, lh):
    cdef cnp.ndarray[double, ndim=2] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef Py_ssize_t K = Xv.shape[0], k
    cdef cnp.ndarray[double, ndim=3] out = np.empty((K, 4, 3))
    for k in range(K):
        _foot_positions_core(&Xv[k, 0], &lhv[0, 0], &out[k, 0, 0])
    return out


def foot_velocities(x, lh):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] out = np.empty((4, 3))
    _foot_velocities_core(&xv[0], &lhv[0, 0], &out[0, 0])
    return out


def foot_velocities_batch(X, lh):
    cdef cnp.ndarray[double, ndim=2] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef Py_ssize_t K = Xv.shape[0], k
    cdef cnp.ndarray[double, ndim=3] out = np.empty((K, 4, 3))
    for k in range(K):
        _foot_velocities_core(&Xv[k, 0], &lhv[0, 0], &out[k, 0, 0])
    return out


def dynamics(x, u, m, inertia, inertia_inv, lh, gravity):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jv = np.ascontiguousarray(inertia, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jiv = np.ascontiguousarray(inertia_inv, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] gv = np.ascontiguousarray(gravity, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] out = np.empty(42)
    _dynamics_core(&xv[0], &uv[0], float(m), &Jv[0, 0], &Jiv[0, 0], &lhv[0, 0], &gv[0], &out[0])
    return out


def dynamics_batch(X, U, m, inertia, inertia_inv, lh, gravity):
    cdef cnp.ndarray[double, ndim=2] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jv = np.ascontiguousarray(inertia, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jiv = np.ascontiguousarray(inertia_inv, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] gv = np.ascontiguousarray(gravity, dtype=np.float64)
    cdef double mm = float(m)
    cdef Py_ssize_t K = Xv.shape[0], k
    cdef cnp.ndarray[double, ndim=2] out = np.empty((K, 42))
    for k in range(K):
        _dynamics_core(&Xv[k, 0], &Uv[k, 0], mm, &Jv[0, 0], &Jiv[0, 0], &lhv[0, 0], &gv[0], &out[k, 0])
    return out


def dynamics_jacobians(x, u, m, inertia, inertia_inv, lh, gravity):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jv = np.ascontiguousarray(inertia, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jiv = np.ascontiguousarray(inertia_inv, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] A = np.zeros((42, 42))
    cdef cnp.ndarray[double, ndim=2] B = np.zeros((42, 27))
    _jacobians_core(&xv[0], &uv[0], float(m), &Jv[0, 0], &Jiv[0, 0], &lhv[0, 0], &A[0, 0], &B[0, 0])
    return A, B


def dynamics_jacobians_batch(X, U, m, inertia, inertia_inv, lh, gravity):
    cdef cnp.ndarray[double, ndim=2] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jv = np.ascontiguousarray(inertia, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jiv = np.ascontiguousarray(inertia_inv, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef double mm = float(m)
    cdef Py_ssize_t K = Xv.shape[0], k
    cdef cnp.ndarray[double, ndim=3] A = np.zeros((K, 42, 42))
    cdef cnp.ndarray[double, ndim=3] B = np.zeros((K, 42, 27))
    for k in range(K):
        _jacobians_core(&Xv[k, 0], &Uv[k, 0], mm, &Jv[0, 0], &Jiv[0, 0], &lhv[0, 0],
                        &A[k, 0, 0], &B[k, 0, 0])
    return A, B


def contact_forces(x, lh, slope, k1, k2, mu_c, mu_s, mu_v, v_s):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] w = np.empty((4, 3))
    cdef cnp.ndarray[double, ndim=2] t = np.empty((4, 3))
    _contact_core(&xv[0], &lhv[0, 0], cos(slope), sin(slope),
                  k1, k2, mu_c, mu_s, mu_v, v_s, &w[0, 0], &t[0, 0])
    return w, t


def contact_forces_batch(X, lh, slope, k1, k2, mu_c, mu_s, mu_v, v_s):
    cdef cnp.ndarray[double, ndim=2] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef Py_ssize_t K = Xv.shape[0], k
    cdef cnp.ndarray[double, ndim=3] w = np.empty((K, 4, 3))
    cdef cnp.ndarray[double, ndim=3] t = np.empty((K, 4, 3))
    cdef double ca = cos(slope), sa = sin(slope)
    for k in range(K):
        _contact_core(&Xv[k, 0], &lhv[0, 0], ca, sa, k1, k2, mu_c, mu_s, mu_v, v_s,
                      &w[k, 0, 0], &t[k, 0, 0])
    return w, t


cdef void _stage_dynamics(const double* x, const double* u_sched, bint closed,
                          double m, const double* J, const double* Jinv,
                          const double* lh, const double* g,
                          double ca, double sa, double k1, double k2,
                          double mu_c, double mu_s, double mu_v, double v_s,
                          double* u_work, double* gw, double* gt, double* out) noexcept nogil:
    cdef int i
    for i in range(27):
        u_work[i] = u_sched[i]
    if closed:
        _contact_core(x, lh, ca, sa, k1, k2, mu_c, mu_s, mu_v, v_s, gw, gt)
        for i in range(12):
            u_work[12 + i] = gw[i]
    _dynamics_core(x, u_work, m, J, Jinv, lh, g, out)


def rollout(x0, U_sched, double dt, int method, bint closed,
            m, inertia, inertia_inv, lh, gravity,
            slope, k1, k2, mu_c, mu_s, mu_v, v_s):
    cdef cnp.ndarray[double, ndim=1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Uv = np.ascontiguousarray(U_sched, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jv = np.ascontiguousarray(inertia, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] Jiv = np.ascontiguousarray(inertia_inv, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] lhv = np.ascontiguousarray(lh, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] gv = np.ascontiguousarray(gravity, dtype=np.float64)
    cdef double mm = float(m)
    cdef double sl = float(slope), _k1 = float(k1), _k2 = float(k2)
    cdef double _mc = float(mu_c), _ms = float(mu_s), _mv = float(mu_v), _vs = float(v_s)
    cdef Py_ssize_t n = Uv.shape[0] - 1, k, i
    cdef cnp.ndarray[double, ndim=2] states = np.empty((n + 1, 42))
    cdef cnp.ndarray[double, ndim=3] grf_w = np.zeros((n + 1, 4, 3))
    cdef cnp.ndarray[double, ndim=3] grf_t = np.zeros((n + 1, 4, 3))
    cdef cnp.ndarray[double, ndim=2] energies = np.empty((n + 1, 2))
    cdef double ca = cos(sl), sa = sin(sl)
    cdef double x[42]
    cdef double xs[42]
    cdef double um[27]
    cdef double uw[27]
    cdef double gw[12]
    cdef double gt[12]
    cdef double k1s[42]
    cdef double k2s[42]
    cdef double k3s[42]
    cdef double k4s[42]
    cdef double R[9]
    cdef double Jw[3]
    cdef double kin, pot, bad_val
    cdef Py_ssize_t bad_step = -1
    cdef bint finite

    for i in range(42):
        x[i] = x0v[i]
    for k in range(n + 1):
        for i in range(42):
            states[k, i] = x[i]
        if closed:
            _contact_core(x, &lhv[0, 0], ca, sa, _k1, _k2, _mc, _ms, _mv, _vs, gw, gt)
            for i in range(12):
                grf_w[k, i // 3, i % 3] = gw[i]
                grf_t[k, i // 3, i % 3] = gt[i]
        else:
            for i in range(12):
                gw[i] = Uv[k, 12 + i]
                grf_w[k, i // 3, i % 3] = gw[i]
            for i in range(4):
                grf_t[k, i, 0] = ca * gw[3 * i] + sa * gw[3 * i + 2]
                grf_t[k, i, 1] = gw[3 * i + 1]
                grf_t[k, i, 2] = -sa * gw[3 * i] + ca * gw[3 * i + 2]
        # energies
        kin = 0.5 * mm * (x[39] * x[39] + x[40] * x[40] + x[41] * x[41])
        _mat3_vec(&Jv[0, 0], x + 36, Jw)
        kin += 0.5 * (x[36] * Jw[0] + x[37] * Jw[1] + x[38] * Jw[2])
        pot = -mm * (x[33] * gv[0] + x[34] * gv[1] + x[35] * gv[2])
        energies[k, 0] = kin
        energies[k, 1] = pot
        if k == n:
            break
        if method == 0:
            _stage_dynamics(x, &Uv[k, 0], closed, mm, &Jv[0, 0], &Jiv[0, 0], &lhv[0, 0],
                            &gv[0], ca, sa, _k1, _k2, _mc, _ms, _mv, _vs, uw, gw, gt, k1s)
            for i in range(42):
                x[i] = x[i] + dt * k1s[i]
        else:
            for i in range(27):
                um[i] = 0.5 * (Uv[k, i] + Uv[k + 1, i])
            _stage_dynamics(x, &Uv[k, 0], closed, mm, &Jv[0, 0], &Jiv[0, 0], &lhv[0, 0],
                            &gv[0], ca, sa, _k1, _k2, _mc, _ms, _mv, _vs, uw, gw, gt, k1s)
            for i in range(42):
                xs[i] = x[i] + 0.5 * dt * k1s[i]
            _stage_dynamics(xs, um, closed, mm, &Jv[0, 0], &Jiv[0, 0], &lhv[0, 0],
                            &gv[0], ca, sa, _k1, _k2, _mc, _ms, _mv, _vs, uw, gw, gt, k2s)
            for i in range(42):
                xs[i] = x[i] + 0.5 * dt * k2s[i]
            _stage_dynamics(xs, um, closed, mm, &Jv[0, 0], &Jiv[0, 0], &lhv[0, 0],
                            &gv[0], ca, sa, _k1, _k2, _mc, _ms, _mv, _vs, uw, gw, gt, k3s)
            for i in range(42):
                xs[i] = x[i] + dt * k3s[i]
            _stage_dynamics(xs, &Uv[k + 1, 0], closed, mm, &Jv[0, 0], &Jiv[0, 0], &lhv[0, 0],
                            &gv[0], ca, sa, _k1, _k2, _mc, _ms, _mv, _vs, uw, gw, gt, k4s)
            for i in range(42):
                x[i] = x[i] + (dt / 6.0) * (k1s[i] + 2.0 * k2s[i] + 2.0 * k3s[i] + k4s[i])
        finite = True
        for i in range(42):
            if not (x[i] == x[i]) or x[i] > 1e300 or x[i] < -1e300:
                finite = False
                break
        if not finite:
            bad_step = k
            break
        # re-project the rotation block
        _unpack_R(x, R)
        if _reorthonormalize_core(R) == 0:
            bad_step = k
            break
        for i in range(3):
            x[24 + 3 * i] = R[i]
            x[24 + 3 * i + 1] = R[3 + i]
            x[24 + 3 * i + 2] = R[6 + i]
    if bad_step >= 0:
        states[bad_step + 1:] = np.nan
    return states, grf_w, grf_t, energies, int(bad_step)


def qn_update(Hinv, B, s, y, bint fresh):
    """Damped BFGS update of the inverse/direct Hessian pair in one pass.

    Returns True when an update was applied (curvature acceptable after
    Powell damping), False when skipped.
    """
    cdef cnp.ndarray[double, ndim=2, mode="c"] Hv = Hinv
    cdef cnp.ndarray[double, ndim=2, mode="c"] Bv = B
    cdef cnp.ndarray[double, ndim=1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] yv = np.ascontiguousarray(y, dtype=np.float64).copy()
    cdef Py_ssize_t n = sv.shape[0], i, j
    cdef cnp.ndarray[double, ndim=1] Bs = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] Hy = np.empty(n)
    cdef double sBs = 0.0, sy = 0.0, theta, smax = 0.0, ymax = 0.0
    cdef double h0, yy, rho_i, yHy, c1, c2

    for i in range(n):
        Bs[i] = 0.0
        for j in range(n):
            Bs[i] += Bv[i, j] * sv[j]
    for i in range(n):
        sBs += sv[i] * Bs[i]
        sy += sv[i] * yv[i]
        if fabs(sv[i]) > smax:
            smax = fabs(sv[i])
        if fabs(yv[i]) > ymax:
            ymax = fabs(yv[i])
    if sBs > 0.0 and sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        sy = 0.0
        for i in range(n):
            yv[i] = theta * yv[i] + (1.0 - theta) * Bs[i]
            sy += sv[i] * yv[i]
        ymax = 0.0
        for i in range(n):
            if fabs(yv[i]) > ymax:
                ymax = fabs(yv[i])
    if not sy > 1e-14 * max(1.0, smax * ymax):
        return False
    if fresh:
        yy = 0.0
        for i in range(n):
            yy += yv[i] * yv[i]
        h0 = sy / yy
        if h0 == h0 and h0 > 0.0:
            for i in range(n):
                for j in range(n):
                    Hv[i, j] = 0.0
                    Bv[i, j] = 0.0
                Hv[i, i] = h0
                Bv[i, i] = 1.0 / h0
            for i in range(n):
                Bs[i] = sv[i] / h0
            sBs = sy = 0.0
            for i in range(n):
                sBs += sv[i] * Bs[i]
                sy += sv[i] * yv[i]
    for i in range(n):
        Hy[i] = 0.0
        for j in range(n):
            Hy[i] += Hv[i, j] * yv[j]
    yHy = 0.0
    for i in range(n):
        yHy += yv[i] * Hy[i]
    rho_i = 1.0 / sy
    c1 = rho_i * rho_i * yHy + rho_i
    for i in range(n):
        for j in range(n):
            Bv[i, j] += yv[i] * yv[j] / sy - Bs[i] * Bs[j] / sBs
            Hv[i, j] += c1 * sv[i] * sv[j] - rho_i * (sv[i] * Hy[j] + Hy[i] * sv[j])
    return True
