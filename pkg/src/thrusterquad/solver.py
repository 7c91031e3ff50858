"""General nonlinear programming by the method of multipliers.

Equality and inequality residual callbacks are folded into an augmented
Lagrangian (squared-hinge treatment for inequalities, following
Powell-Hestenes-Rockafellar); the inner minimization is damped BFGS
with a backtracking Armijo line search. Gradients come from central
finite differences of the merit function unless the problem supplies
analytic callbacks, in which case the finite-difference path doubles as
a test oracle for them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels

MULTIPLIER_CAP = 1e12


def fd_gradient(callback, point: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient with per-coordinate step h*max(1, |x_i|)."""
    if not h > 0.0:
        raise ValueError("step must be positive")
    x = np.asarray(point, dtype=float)
    grad = np.empty(x.size)
    for i in range(x.size):
        hi = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += hi
        xm[i] -= hi
        fp = callback(xp)
        fm = callback(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite callback value near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * hi)
    return grad


@dataclass
class NlpProblem:
    """min cost(x) s.t. eq(x) = 0, ineq(x) >= 0, lb <= x <= ub.

    Callback output dimensions must not change between evaluations.
    The *_grad/*_jac callbacks are optional analytic derivatives; the
    solver uses them only when every needed one is present, otherwise it
    differentiates the merit function numerically.
    """

    n: int
    cost: "callable"
    x0: np.ndarray
    eq: "callable" = None
    ineq: "callable" = None
    cost_grad: "callable" = None
    eq_jac: "callable" = None
    ineq_jac: "callable" = None
    eq_jacT: "callable" = None      # (x, w) -> J_eq(x)^T w, preferred over eq_jac
    ineq_jacT: "callable" = None    # (x, w) -> J_ineq(x)^T w
    cost_hess_diag: "callable" = None  # diagonal of the cost Hessian
    lb: np.ndarray = None
    ub: np.ndarray = None
    x_scale: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (self.n,):
            raise ValueError("x0 must have length n")
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("initial guess must be finite")
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError("bounds must have length n")
        if self.x_scale is not None:
            self.x_scale = np.asarray(self.x_scale, dtype=float)


@dataclass
class SolverOptions:
    tol_eq: float = 1e-6
    tol_ineq: float = 1e-6
    step_tol: float = 1e-10
    max_outer: int = 200
    max_inner: int = 500
    rho0: float = 0.0           # <= 0 balances the penalty against the cost at the guess
    rho_growth: float = 4.0
    rho_max: float = 1e12
    grad_tol: float = 1e-4      # relative to the merit gradient at the guess
    inner_tol: float = 1e-3     # per-outer relative gradient decrease target
    merit_ftol: float = 1e-12   # relative merit stall threshold
    fd_step: float = 1e-6
    armijo: float = 1e-4
    max_backtracks: int = 60
    step_cap: float = 50.0      # scaled-space cap on the first trial step
    polish: bool = True
    polish_steps: int = 20
    cost_settle_tol: float = 1e-4   # relative cost change that counts as settled

    @classmethod
    def from_dict(cls, d: dict) -> "SolverOptions":
        return cls(**d)


@dataclass
class SolveReport:
    status: str                 # converged | max-iter | line-search-failure
    iterations: int             # outer iterations
    inner_iterations: int
    final_cost: float
    max_eq_residual: float
    min_ineq_margin: float
    wall_time: float
    eq_history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "inner_iterations": self.inner_iterations,
            "final_cost": self.final_cost,
            "max_eq_residual": self.max_eq_residual,
            "min_ineq_margin": self.min_ineq_margin,
            "wall_time": self.wall_time,
            "eq_history": list(self.eq_history),
        }


class _Workspace:
    """Problem transformed to solver space: fixed variables eliminated,
    finite bounds appended as inequality rows, variables diagonally scaled."""

    def __init__(self, problem: NlpProblem):
        self.problem = problem
        lb, ub = problem.lb, problem.ub
        self.fixed = np.isfinite(lb) & np.isfinite(ub) & (lb == ub)
        self.free = ~self.fixed
        self.base = problem.x0.copy()
        self.base[self.fixed] = lb[self.fixed]
        self.nf = int(self.free.sum())
        scale = np.ones(problem.n) if problem.x_scale is None else problem.x_scale
        self.scale = scale[self.free]
        free_idx = np.flatnonzero(self.free)
        self.lo_idx = free_idx[np.isfinite(lb[free_idx])]
        self.hi_idx = free_idx[np.isfinite(ub[free_idx])]
        self.has_eq = problem.eq is not None
        self.has_ineq = problem.ineq is not None or self.lo_idx.size or self.hi_idx.size
        self._cache_z = None
        self._cache_val = None
        eq_diff = problem.eq_jacT is not None or problem.eq_jac is not None
        ineq_diff = problem.ineq_jacT is not None or problem.ineq_jac is not None
        self.analytic = (problem.cost_grad is not None
                         and (not self.has_eq or eq_diff)
                         and (problem.ineq is None or ineq_diff))

    def embed(self, z: np.ndarray) -> np.ndarray:
        x = self.base.copy()
        x[self.free] = z * self.scale
        return x

    def extract(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[self.free] / self.scale

    def cost(self, z):
        return self._evals(z)[0]

    def eq(self, z):
        return self._evals(z)[1]

    def ineq(self, z):
        return self._evals(z)[2]

    def _evals(self, z):
        # line search and gradient assembly revisit the same point
        if self._cache_z is not None and z.shape == self._cache_z.shape \
                and np.array_equal(z, self._cache_z):
            return self._cache_val
        x = self.embed(z)
        f = float(self.problem.cost(x))
        c = (np.asarray(self.problem.eq(x), dtype=float)
             if self.has_eq else np.zeros(0))
        parts = []
        if self.problem.ineq is not None:
            parts.append(np.asarray(self.problem.ineq(x), dtype=float))
        if self.lo_idx.size:
            parts.append(x[self.lo_idx] - self.problem.lb[self.lo_idx])
        if self.hi_idx.size:
            parts.append(self.problem.ub[self.hi_idx] - x[self.hi_idx])
        g = np.concatenate(parts) if parts else np.zeros(0)
        self._cache_z = z.copy()
        self._cache_val = (f, c, g)
        return self._cache_val

    def cost_grad(self, z):
        g = np.asarray(self.problem.cost_grad(self.embed(z)), dtype=float)
        return g[self.free] * self.scale

    def eq_jacT(self, z, w):
        """J_eq^T w in solver space."""
        x = self.embed(z)
        if self.problem.eq_jacT is not None:
            full = np.asarray(self.problem.eq_jacT(x, w), dtype=float)
        else:
            full = np.asarray(self.problem.eq_jac(x), dtype=float).T @ w
        return full[self.free] * self.scale

    def eq_jac(self, z):
        J = np.asarray(self.problem.eq_jac(self.embed(z)), dtype=float)
        return J[:, self.free] * self.scale[None, :]

    def ineq_jac(self, z):
        """Dense inequality Jacobian in solver space, bound rows included."""
        blocks = []
        if self.problem.ineq is not None:
            J = np.asarray(self.problem.ineq_jac(self.embed(z)), dtype=float)
            blocks.append(J[:, self.free] * self.scale[None, :])
        free_pos = np.cumsum(self.free) - 1
        if self.lo_idx.size:
            Jb = np.zeros((self.lo_idx.size, self.nf))
            cols = free_pos[self.lo_idx]
            Jb[np.arange(self.lo_idx.size), cols] = self.scale[cols]
            blocks.append(Jb)
        if self.hi_idx.size:
            Jb = np.zeros((self.hi_idx.size, self.nf))
            cols = free_pos[self.hi_idx]
            Jb[np.arange(self.hi_idx.size), cols] = -self.scale[cols]
            blocks.append(Jb)
        if not blocks:
            return np.zeros((0, self.nf))
        return np.vstack(blocks)

    def gauss_newton_hessian(self, z, mu, rho):
        """Gauss-Newton model of the merit Hessian (constraint curvature
        dropped); used to seed the quasi-Newton inner model."""
        H = rho * 1e-8 * np.eye(self.nf)
        if self.problem.cost_hess_diag is not None:
            ch = np.asarray(self.problem.cost_hess_diag(self.embed(z)), dtype=float)
            H[np.diag_indices(self.nf)] += np.maximum(ch[self.free], 0.0) * self.scale ** 2
        if self.has_eq:
            Je = self.eq_jac(z)
            H += rho * (Je.T @ Je)
        gi = self.ineq(z)
        if gi.size:
            active = (mu / rho - gi) > 0.0
            if np.any(active):
                Ja = self.ineq_jac(z)[active]
                H += rho * (Ja.T @ Ja)
        return H

    @property
    def can_precondition(self):
        ineq_ok = self.problem.ineq is None or self.problem.ineq_jac is not None
        return self.has_eq and self.problem.eq_jac is not None and ineq_ok

    def ineq_jacT(self, z, w):
        """J_ineq^T w in solver space, including the bound rows."""
        x = self.embed(z)
        out = np.zeros(self.nf)
        m_user = 0
        if self.problem.ineq is not None:
            m_user = w.size - self.lo_idx.size - self.hi_idx.size
            wu = w[:m_user]
            if self.problem.ineq_jacT is not None:
                full = np.asarray(self.problem.ineq_jacT(x, wu), dtype=float)
            else:
                full = np.asarray(self.problem.ineq_jac(x), dtype=float).T @ wu
            out += full[self.free] * self.scale
        free_pos = np.cumsum(self.free) - 1  # full index -> free index
        if self.lo_idx.size:
            wl = w[m_user:m_user + self.lo_idx.size]
            np.add.at(out, free_pos[self.lo_idx], wl * self.scale[free_pos[self.lo_idx]])
        if self.hi_idx.size:
            wh = w[m_user + self.lo_idx.size:]
            np.add.at(out, free_pos[self.hi_idx], -wh * self.scale[free_pos[self.hi_idx]])
        return out


def _al_value(f, c, g, lam, mu, rho):
    val = f
    if c.size:
        val += -lam @ c + 0.5 * rho * (c @ c)
    if g.size:
        h = np.maximum(0.0, mu / rho - g)
        val += 0.5 * rho * (h @ h - (mu / rho) @ (mu / rho))
    return val


def _line_search(value, x, fx, d, slope, armijo, max_backtracks):
    t = 1.0
    for _ in range(max_backtracks):
        x_new = x + t * d
        f_new = value(x_new)
        if np.isfinite(f_new) and f_new <= fx + armijo * t * slope:
            return x_new, f_new, True
        t *= 0.5
    return x, fx, False


class _QuasiNewton:
    """Damped BFGS state (inverse and direct approximations), kept warm
    across augmented-Lagrangian outer iterations. The rank-two update
    itself runs in the kernel backend."""

    def __init__(self, n):
        self.n = n
        self.reset()

    def reset(self):
        self.Hinv = np.eye(self.n)
        self.B = np.eye(self.n)
        self.fresh = True

    def set_model(self, B, Hinv):
        self.B = np.ascontiguousarray(B)
        self.Hinv = np.ascontiguousarray(Hinv)
        self.fresh = False

    def direction(self, g):
        return -(self.Hinv @ g)

    def update(self, s, y):
        if kernels.qn_update(self.Hinv, self.B, s, y, self.fresh):
            self.fresh = False


def _bfgs_minimize(value, grad, z, grad_tol, max_iter, opts: SolverOptions,
                   qn: _QuasiNewton):
    """Inner minimization; falls back to steepest descent on failed
    quasi-Newton steps. Returns (z, f, g, iters, status).

    Terminates on the gradient target, on a vanishing step, or when the
    merit value stalls (three consecutive improvements below ftol), which
    is the practical stationarity signal at this scale.
    """
    fz = value(z)
    gz = grad(z)
    iters = 0
    stall = 0
    status = "grad-tol"
    while True:
        gnorm = np.abs(gz).max() if gz.size else 0.0
        if gnorm <= grad_tol:
            status = "grad-tol"
            break
        if stall >= 3:
            status = "f-stall"
            break
        if iters >= max_iter:
            status = "max-inner"
            break
        d = qn.direction(gz)
        slope = d @ gz
        if not np.isfinite(slope) or slope >= 0.0:
            qn.reset()
            d = -gz
            slope = d @ gz
        dn = float(np.linalg.norm(d))
        if dn > opts.step_cap:  # keep the first trial inside a sane radius
            d *= opts.step_cap / dn
            slope = d @ gz
        z_new, f_new, ok = _line_search(value, z, fz, d, slope, opts.armijo, opts.max_backtracks)
        if not ok and not qn.fresh:
            qn.reset()
            d = -gz
            dn = float(np.linalg.norm(d))
            if dn > opts.step_cap:
                d *= opts.step_cap / dn
            z_new, f_new, ok = _line_search(value, z, fz, d, d @ gz, opts.armijo, opts.max_backtracks)
        if not ok:
            status = "line-search-failure"
            break
        s = z_new - z
        iters += 1
        if np.abs(s).max() <= opts.step_tol:
            z, fz = z_new, f_new
            gz = grad(z)
            status = "step-tol"
            break
        stall = stall + 1 if fz - f_new <= opts.merit_ftol * max(1.0, abs(f_new)) else 0
        g_new = grad(z_new)
        qn.update(s, g_new - gz)
        z, fz, gz = z_new, f_new, g_new
    return z, fz, gz, iters, status


def _feasibility_polish(ws: _Workspace, z, opts: SolverOptions,
                        target_eq: float = None, target_iv: float = None):
    """Minimum-norm Gauss-Newton restoration of feasibility.

    Each step drives the equality residual and any violated inequality
    rows toward zero while holding boundary-active rows to first order;
    a step lands only when the combined violation strictly drops."""
    use_ineq = ws.problem.ineq is None or ws.problem.ineq_jac is not None
    target_eq = 0.05 * opts.tol_eq if target_eq is None else target_eq
    target_iv = 0.5 * opts.tol_ineq if target_iv is None else target_iv

    def combined(c, g):
        ev = np.abs(c).max() if c.size else 0.0
        iv = max(0.0, -float(g.min())) if g.size else 0.0
        return max(ev, iv)

    for _ in range(opts.polish_steps):
        c = ws.eq(z)
        g = ws.ineq(z)
        viol = combined(c, g)
        ev = np.abs(c).max() if c.size else 0.0
        iv = max(0.0, -float(g.min())) if g.size else 0.0
        if ev <= target_eq and iv <= target_iv:
            break
        J = ws.eq_jac(z)
        rhs = c
        if use_ineq and g.size:
            viol_rows = g < 0.0
            act_rows = (g >= 0.0) & (g <= 10.0 * opts.tol_ineq)
            if np.any(viol_rows) or np.any(act_rows):
                Jg = ws.ineq_jac(z)
                rows = [J]
                parts = [c]
                if np.any(viol_rows):
                    rows.append(Jg[viol_rows])
                    parts.append(g[viol_rows])
                if np.any(act_rows):
                    rows.append(Jg[act_rows])
                    parts.append(np.zeros(int(act_rows.sum())))
                J = np.vstack(rows)
                rhs = np.concatenate(parts)
        JJt = J @ J.T
        delta = 1e-12 * max(1.0, float(np.trace(JJt)) / max(1, JJt.shape[0]))
        try:
            w = np.linalg.solve(JJt + delta * np.eye(JJt.shape[0]), rhs)
        except np.linalg.LinAlgError:
            break
        dz = -(J.T @ w)
        t = 1.0
        accepted = False
        for _ in range(20):
            z_try = z + t * dz
            if combined(ws.eq(z_try), ws.ineq(z_try)) < viol:
                z = z_try
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    return z


def solve(problem: NlpProblem, options: SolverOptions | None = None):
    """Augmented-Lagrangian solve; returns (solution vector, SolveReport).

    Non-convergence is reported in the SolveReport status, never raised.
    """
    opts = options or SolverOptions()
    t_start = time.perf_counter()
    ws = _Workspace(problem)
    z = ws.extract(problem.x0)

    f0, c0, g0i = ws._evals(z)
    lam = np.zeros(c0.size)
    mu = np.zeros(g0i.size)
    if opts.rho0 > 0.0:
        rho = opts.rho0
    else:
        # penalty comparable to the cost scale at the guess
        csq = float(c0 @ c0) + float(np.minimum(g0i, 0.0) @ np.minimum(g0i, 0.0)) \
            if c0.size or g0i.size else 0.0
        rho = float(np.clip(2.0 * max(abs(f0), 1.0) / max(csq, 1.0), 10.0, 1e6))

    def make_al(lam, mu, rho):
        def value(zz):
            return _al_value(ws.cost(zz), ws.eq(zz), ws.ineq(zz), lam, mu, rho)

        if ws.analytic:
            def gradient(zz):
                g = ws.cost_grad(zz)
                c = ws.eq(zz)
                if c.size:
                    g = g + ws.eq_jacT(zz, rho * c - lam)
                gi = ws.ineq(zz)
                if gi.size:
                    h = np.maximum(0.0, mu / rho - gi)
                    if np.any(h > 0.0):
                        g = g - ws.ineq_jacT(zz, rho * h)
                return g
        else:
            def gradient(zz):
                return fd_gradient(value, zz, opts.fd_step)
        return value, gradient

    def eq_viol(c):
        return float(np.abs(c).max()) if c.size else 0.0

    def ineq_viol(g):
        return float(max(0.0, -g.min())) if g.size else 0.0

    can_polish = opts.polish and ws.has_eq and problem.eq_jac is not None
    if can_polish:
        # start from a restored point: Gauss-Newton handles feasibility,
        # the multiplier loop concentrates on optimality
        z = _feasibility_polish(ws, z, opts)
    c = ws.eq(z)
    g = ws.ineq(z)
    best_eq = eq_viol(c)
    best_total = max(best_eq, ineq_viol(g))
    eq_history = []
    inner_total = 0
    status = "max-iter"
    gnorm0 = None
    outer_done = 0
    qn = _QuasiNewton(z.size)
    ls_failures = 0
    rejects = 0
    cost_prev = None

    for outer in range(opts.max_outer):
        value, gradient = make_al(lam, mu, rho)
        g_start = gradient(z)
        gs_norm = float(np.abs(g_start).max()) if g_start.size else 0.0
        if gnorm0 is None:
            gnorm0 = max(1.0, gs_norm)
        if ws.can_precondition:
            H0 = ws.gauss_newton_hessian(z, mu, rho)
            try:
                qn.set_model(H0, np.linalg.inv(H0))
            except np.linalg.LinAlgError:
                qn.reset()
        # loose early, tight once feasibility is near the goal
        omega = opts.inner_tol if best_eq > 10.0 * opts.tol_eq else opts.grad_tol
        target = max(omega * gs_norm, opts.grad_tol * gnorm0)
        z_new, _, g_al, iters, inner_status = _bfgs_minimize(
            value, gradient, z.copy(), target, opts.max_inner, opts, qn)
        inner_total += iters
        outer_done = outer + 1

        c_new = ws.eq(z_new)
        g_new = ws.ineq(z_new)
        if can_polish and (eq_viol(c_new) > best_eq or ineq_viol(g_new) > opts.tol_ineq):
            # restore the candidate before judging it
            z_new = _feasibility_polish(ws, z_new, opts,
                                        target_eq=min(best_eq, 0.05 * opts.tol_eq))
            c_new = ws.eq(z_new)
            g_new = ws.ineq(z_new)
        ev = eq_viol(c_new)
        iv = ineq_viol(g_new)
        accepted = ev <= best_eq + 1e-12 and max(ev, iv) <= best_total + 1e-12
        if accepted:
            rejects = 0
            improved = ev <= 0.5 * best_eq + 1e-15 and iv <= opts.tol_ineq
            z, c, g = z_new, c_new, g_new
            best_eq = min(best_eq, ev)
            best_total = min(best_total, max(ev, iv))
            if c.size:
                lam = np.clip(lam - rho * c, -MULTIPLIER_CAP, MULTIPLIER_CAP)
            if g.size:
                mu = np.clip(np.maximum(0.0, mu - rho * g), 0.0, MULTIPLIER_CAP)
            if not improved:
                rho = min(rho * opts.rho_growth, opts.rho_max)
        else:
            rejects += 1
            rho = min(rho * opts.rho_growth, opts.rho_max)
            qn.reset()
        eq_history.append(best_eq)
        if rejects >= 4 and rho >= opts.rho_max:
            break  # stalled: no acceptable progress at the penalty ceiling
        ls_failures = ls_failures + 1 if inner_status == "line-search-failure" else 0

        cost_now = ws.cost(z)
        settled = cost_prev is not None and \
            abs(cost_now - cost_prev) <= opts.cost_settle_tol * max(1.0, abs(cost_now))
        cost_prev = cost_now
        # repeated rejections mean the cost cannot move without breaking
        # monotone feasibility: treat that as settled too
        stationary = (accepted and (
            inner_status in ("grad-tol", "step-tol", "f-stall") or settled)) \
            or rejects >= 2
        if best_eq <= opts.tol_eq and ineq_viol(g) <= opts.tol_ineq and stationary:
            status = "converged"
            break
        if ls_failures >= 3 and rho >= opts.rho_max:
            status = "line-search-failure"
            break

    if can_polish:
        z = _feasibility_polish(ws, z, opts)
        c = ws.eq(z)
        g = ws.ineq(z)

    final_eq = eq_viol(c)
    final_ineq = float(g.min()) if g.size else np.inf
    if status == "converged" and (final_eq > opts.tol_eq or (g.size and final_ineq < -opts.tol_ineq)):
        status = "max-iter"
    x = ws.embed(z)
    report = SolveReport(
        status=status,
        iterations=outer_done,
        inner_iterations=inner_total,
        final_cost=float(problem.cost(x)),
        max_eq_residual=final_eq,
        min_ineq_margin=final_ineq,
        wall_time=time.perf_counter() - t_start,
        eq_history=eq_history,
    )
    return x, report


def warm_start(prev_solution: np.ndarray, problem: NlpProblem) -> np.ndarray:
    """Initial guess from a previous solution.

    With transcription metadata present, knot body positions are shifted
    by the new start-state offset (one stride for stride-to-stride
    continuation) and the first knot is pinned to the new start exactly;
    otherwise the solution is returned verbatim.
    """
    prev = np.asarray(prev_solution, dtype=float)
    if prev.shape != (problem.n,):
        raise ValueError(f"dimension mismatch: previous {prev.shape}, problem ({problem.n},)")
    guess = prev.copy()
    lay = problem.metadata.get("decision_layout")
    start = problem.metadata.get("start_state")
    if lay is None or start is None:
        return guess
    start = np.asarray(start, dtype=float)
    first = guess[lay.state_slice(0)]
    delta = start[33:36] - first[33:36]
    for k in range(lay.n_knots):
        sl = lay.state_slice(k)
        guess[sl.start + 33:sl.start + 36] += delta
    guess[lay.state_slice(0)] = start
    return guess
