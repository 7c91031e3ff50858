import numpy as np
import pytest

from thrusterquad.solver import (NlpProblem, SolverOptions, fd_gradient, solve,
                                 warm_start)


def test_fd_gradient_quadratic(rng):
    A = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
    x = rng.normal(size=3)
    g = fd_gradient(lambda z: 0.5 * z @ A @ z, x, 1e-6)
    np.testing.assert_allclose(g, A @ x, rtol=1e-7, atol=1e-8)


def test_fd_gradient_constant():
    g = fd_gradient(lambda z: 3.5, np.zeros(4), 1e-6)
    np.testing.assert_array_equal(g, np.zeros(4))


def test_fd_gradient_richardson_ratio():
    def f(x):
        return np.sin(x[0]) + x[1] ** 3 + np.exp(0.5 * x[2])

    x = np.array([0.4, -0.3, 0.2])
    exact = np.array([np.cos(0.4), 3 * 0.09, 0.5 * np.exp(0.1)])
    e1 = np.abs(fd_gradient(f, x, 2e-4) - exact).max()
    e2 = np.abs(fd_gradient(f, x, 1e-4) - exact).max()
    assert 3.6 < e1 / e2 < 4.4


def test_fd_gradient_rejects_bad_step():
    with pytest.raises(ValueError):
        fd_gradient(lambda z: 0.0, np.zeros(2), 0.0)


def test_fd_gradient_nonfinite_callback():
    with pytest.raises(ValueError):
        fd_gradient(lambda z: np.nan, np.zeros(2), 1e-6)


def test_solve_bound_constrained_scalar():
    prob = NlpProblem(n=1, cost=lambda x: float(x[0] ** 2), x0=np.array([3.0]),
                      ineq=lambda x: np.array([x[0] - 1.0]))
    x, rep = solve(prob, SolverOptions())
    assert rep.converged
    assert abs(x[0] - 1.0) < 1e-6


def test_solve_rosenbrock():
    def rosen(x):
        return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2)

    prob = NlpProblem(n=2, cost=rosen, x0=np.array([-1.2, 1.0]))
    x, rep = solve(prob, SolverOptions(max_inner=2000, grad_tol=1e-9))
    assert rep.converged
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-4)


def test_solve_equality_qp_matches_kkt():
    # min x'Ax/2 + b'x  s.t.  x0 + x1 = 1
    # KKT: [A  c; c' 0][x; -lam] = [-b; 1] with c = [1, 1]'
    A = np.array([[2.0, 0.0], [0.0, 4.0]])
    b = np.array([-1.0, -2.0])
    K = np.array([[2.0, 0.0, 1.0], [0.0, 4.0, 1.0], [1.0, 1.0, 0.0]])
    sol = np.linalg.solve(K, np.array([1.0, 2.0, 1.0]))
    x_star = sol[:2]

    prob = NlpProblem(
        n=2,
        cost=lambda x: float(0.5 * x @ A @ x + b @ x),
        x0=np.array([0.0, 0.0]),
        eq=lambda x: np.array([x[0] + x[1] - 1.0]),
    )
    x, rep = solve(prob, SolverOptions())
    assert rep.converged
    np.testing.assert_allclose(x, x_star, atol=1e-6)
    assert rep.max_eq_residual <= 1e-6


def test_solve_inequality_qp():
    # active inequality: min (x0-2)^2 + (x1-1)^2 s.t. x0 + x1 <= 2
    prob = NlpProblem(
        n=2,
        cost=lambda x: float((x[0] - 2.0) ** 2 + (x[1] - 1.0) ** 2),
        x0=np.zeros(2),
        ineq=lambda x: np.array([2.0 - x[0] - x[1]]),
    )
    x, rep = solve(prob, SolverOptions())
    assert rep.converged
    np.testing.assert_allclose(x, [1.5, 0.5], atol=1e-5)


def test_solve_box_bounds_via_fields():
    prob = NlpProblem(n=2, cost=lambda x: float((x[0] + 1.0) ** 2 + (x[1] - 3.0) ** 2),
                      x0=np.array([0.5, 0.5]),
                      lb=np.array([0.0, -np.inf]), ub=np.array([np.inf, 1.0]))
    x, rep = solve(prob, SolverOptions())
    assert rep.converged
    np.testing.assert_allclose(x, [0.0, 1.0], atol=1e-6)


def test_solve_fixed_variables_eliminated():
    prob = NlpProblem(n=3, cost=lambda x: float(np.sum(x ** 2)),
                      x0=np.array([1.0, 5.0, -2.0]),
                      lb=np.array([-np.inf, 5.0, -np.inf]),
                      ub=np.array([np.inf, 5.0, np.inf]))
    x, rep = solve(prob, SolverOptions())
    assert x[1] == 5.0
    np.testing.assert_allclose(x[[0, 2]], [0.0, 0.0], atol=1e-8)


def test_solve_reports_nonconvergence():
    prob = NlpProblem(n=1, cost=lambda x: float(x[0] ** 2), x0=np.array([4.0]),
                      eq=lambda x: np.array([x[0] ** 2 + 1.0]))  # infeasible
    x, rep = solve(prob, SolverOptions(max_outer=8))
    assert not rep.converged
    assert rep.status in ("max-iter", "line-search-failure")
    assert rep.max_eq_residual >= 1.0


def test_solve_kkt_projected_gradient(rng):
    # converged solutions carry a small projected gradient relative to the guess
    A = np.diag([1.0, 10.0, 100.0])

    def cost(x):
        return float(0.5 * x @ A @ x)

    x0 = rng.normal(size=3) * 3.0
    prob = NlpProblem(n=3, cost=cost, x0=x0)
    x, rep = solve(prob, SolverOptions(grad_tol=1e-6))
    assert rep.converged
    g0 = np.abs(A @ x0).max()
    assert np.abs(A @ x).max() <= 1e-4 * g0


def test_feasibility_monotone_history():
    def cost(x):
        return float((x[0] - 3.0) ** 2 + x[1] ** 2)

    prob = NlpProblem(n=2, cost=cost, x0=np.array([5.0, 5.0]),
                      eq=lambda x: np.array([x[0] * x[1] - 1.0]))
    x, rep = solve(prob, SolverOptions())
    hist = rep.eq_history
    for prev, cur in zip(hist, hist[1:]):
        assert cur <= prev + 1e-12


def test_solve_determinism():
    def cost(x):
        return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2)

    prob1 = NlpProblem(n=2, cost=cost, x0=np.array([-1.2, 1.0]))
    prob2 = NlpProblem(n=2, cost=cost, x0=np.array([-1.2, 1.0]))
    x1, rep1 = solve(prob1, SolverOptions(max_inner=2000))
    x2, rep2 = solve(prob2, SolverOptions(max_inner=2000))
    assert np.array_equal(x1, x2)
    assert rep1.inner_iterations == rep2.inner_iterations


def test_warm_start_identical_problem_verbatim(rng):
    prev = rng.normal(size=5)
    prob = NlpProblem(n=5, cost=lambda x: float(x @ x), x0=np.zeros(5))
    np.testing.assert_array_equal(warm_start(prev, prob), prev)


def test_warm_start_dimension_mismatch(rng):
    prob = NlpProblem(n=4, cost=lambda x: float(x @ x), x0=np.zeros(4))
    with pytest.raises(ValueError):
        warm_start(rng.normal(size=5), prob)
