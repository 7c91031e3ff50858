import numpy as np
import pytest
from conftest import random_state

from thrusterquad import layout
from thrusterquad.collocation import (CostWeights, GoalSpec, PlanBounds,
                                      ReferenceTrajectory, Transcription,
                                      boundary_residuals, collocation_defects,
                                      cost, hermite_coefficients,
                                      inequality_constraints, input_interpolate,
                                      midpoint_states, state_interpolate)
from thrusterquad.contact import Terrain
from thrusterquad.model import (BodyParams, BodyState, HromState, InputVector,
                                LegJointState)
from thrusterquad.scenario import batched_dynamics
from thrusterquad.simulate import rollout


def make_transcription(rng, n=5, t_f=0.4, stance=None):
    times = np.linspace(0.0, t_f, n)
    X = np.array([random_state(rng) for _ in range(n)])
    U = rng.normal(size=(n, layout.NU))
    stance = np.zeros((n, 4), dtype=bool) if stance is None else stance
    return Transcription(times, X, U, stance)


def test_transcription_validation(rng):
    with pytest.raises(ValueError):
        Transcription(np.array([0.0, 0.1, 0.1]), np.zeros((3, 42)),
                      np.zeros((3, 27)), np.zeros((3, 4), dtype=bool))
    with pytest.raises(ValueError):
        Transcription(np.array([0.1, 0.2]), np.zeros((2, 42)),
                      np.zeros((2, 27)), np.zeros((2, 4), dtype=bool))


def test_transcription_json_roundtrip(rng):
    tr = make_transcription(rng)
    back = Transcription.from_dict(tr.to_dict())
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.inputs, tr.inputs)
    np.testing.assert_array_equal(back.knot_times, tr.knot_times)
    np.testing.assert_array_equal(back.stance, tr.stance)


def test_cost_zero_on_reference(rng):
    tr = make_transcription(rng)
    tr.inputs[:] = 0.0
    refs = ReferenceTrajectory(tr.states.copy(), tr.stance)
    w = CostWeights(np.ones(42), np.ones(27))
    assert cost(tr, refs, w) == 0.0


def test_cost_single_knot_term():
    times = np.array([0.0, 1.0])
    X = np.zeros((2, 42))
    refs_states = np.zeros((2, 42))
    refs_states[0, 0] = 1.0  # e = [1, 0, ...] at the first knot
    q = np.zeros(42)
    q[0] = 2.0
    tr = Transcription(times, X, np.zeros((2, 27)), np.zeros((2, 4), dtype=bool))
    refs = ReferenceTrajectory(refs_states, tr.stance)
    assert cost(tr, refs, CostWeights(q, np.zeros(27))) == pytest.approx(2.0, abs=1e-15)


def test_cost_matches_double_loop_oracle(rng):
    tr = make_transcription(rng, n=7)
    refs = ReferenceTrajectory(np.array([random_state(rng) for _ in range(7)]), tr.stance)
    q = rng.random(42)
    r = rng.random(27)
    total = 0.0
    for k in range(7):
        e = refs.states[k] - tr.states[k]
        for j in range(42):
            total += q[j] * e[j] * e[j]
    for k in range(6):  # input of the final knot carries no term
        for j in range(27):
            total += r[j] * tr.inputs[k, j] * tr.inputs[k, j]
    assert cost(tr, refs, CostWeights(q, r)) == pytest.approx(total, rel=1e-12)


def test_cost_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(-np.ones(42), np.ones(27))


def test_input_interpolate_at_knots(rng):
    tr = make_transcription(rng)
    for k, t in enumerate(tr.knot_times):
        np.testing.assert_array_equal(
            input_interpolate(tr.inputs, tr.knot_times, float(t)), tr.inputs[k])


def test_input_interpolate_midpoint_mean(rng):
    tr = make_transcription(rng)
    t = 0.5 * (tr.knot_times[1] + tr.knot_times[2])
    np.testing.assert_allclose(
        input_interpolate(tr.inputs, tr.knot_times, float(t)),
        0.5 * (tr.inputs[1] + tr.inputs[2]), atol=1e-15)


def test_input_interpolate_linear_exact(rng):
    times = np.linspace(0.0, 1.0, 6)
    slope = rng.normal(size=27)
    U = np.outer(times, slope)
    for t in rng.uniform(0, 1, 20):
        np.testing.assert_allclose(input_interpolate(U, times, float(t)),
                                   t * slope, atol=1e-12)


def test_input_interpolate_out_of_range(rng):
    tr = make_transcription(rng)
    with pytest.raises(ValueError):
        input_interpolate(tr.inputs, tr.knot_times, -0.01)


def test_hermite_endpoint_identities(rng):
    for _ in range(50):
        x0, x1, f0, f1 = rng.normal(size=4)
        h = float(rng.uniform(0.05, 2.0))
        c0, c1, c2, c3 = hermite_coefficients(x0, x1, f0, f1, h)
        assert abs(float(c0) - x0) < 1e-12
        assert abs(float(c0 + c1 + c2 + c3) - x1) < 1e-12
        assert abs(float(c1) / h - f0) < 1e-12
        assert abs(float(c1 + 2 * c2 + 3 * c3) / h - f1) < 1e-12


def test_state_interpolate_reproduces_knots(rng, params):
    tr = make_transcription(rng)
    dyn = batched_dynamics(params)
    for k in (0, 2, 4):
        x, xd = state_interpolate(tr, dyn, float(tr.knot_times[k]))
        np.testing.assert_allclose(x, tr.states[k], atol=1e-12)
        np.testing.assert_allclose(xd, dyn(tr.states[k], tr.inputs[k]), atol=1e-10)


def test_state_interpolate_quadratic_arc(params):
    # constant-acceleration fall: the cubic reproduces the parabola exactly
    x0 = HromState(LegJointState.zeros(), BodyState.at_rest(p=(0, 0, 5.0))).flatten()
    dyn = batched_dynamics(params)
    h = 0.2
    x1 = x0.copy()
    x1[35] = 5.0 - 0.5 * 9.81 * h * h
    x1[41] = -9.81 * h
    tr = Transcription(np.array([0.0, h]), np.vstack([x0, x1]),
                       np.zeros((2, 27)), np.zeros((2, 4), dtype=bool))
    t = 0.5 * h
    x_mid, xd_mid = state_interpolate(tr, dyn, t)
    assert abs(x_mid[35] - (5.0 - 0.5 * 9.81 * t * t)) < 1e-12
    assert abs(xd_mid[35] - (-9.81 * t)) < 1e-12


def test_midpoint_derivative_formula(rng, params):
    # symbolic Hermite midpoint identities: value and slope at sigma = 1/2
    tr = make_transcription(rng, n=3)
    dyn = batched_dynamics(params)
    F = dyn(tr.states, tr.inputs)
    Xc, Xdotc, _ = midpoint_states(tr, F)
    h = tr.knot_times[1] - tr.knot_times[0]
    for j in range(2):
        x_mid = 0.5 * (tr.states[j] + tr.states[j + 1]) + h * (F[j] - F[j + 1]) / 8.0
        xd_mid = 1.5 * (tr.states[j + 1] - tr.states[j]) / h - 0.25 * (F[j] + F[j + 1])
        np.testing.assert_allclose(Xc[j], x_mid, atol=1e-13)
        np.testing.assert_allclose(Xdotc[j], xd_mid, atol=1e-13)
        t_mid = float(tr.knot_times[j]) + 0.5 * h
        xi, xdi = state_interpolate(tr, dyn, t_mid)
        np.testing.assert_allclose(xi, x_mid, atol=1e-12)
        np.testing.assert_allclose(xdi, xd_mid, atol=1e-11)


def test_defects_zero_for_hover_equilibrium(params):
    x = HromState(LegJointState.zeros(), BodyState.at_rest()).flatten()
    u = InputVector.zeros()
    u.u_T[:] = -params.mass * params.gravity
    uf = u.flatten()
    tr = Transcription(np.array([0.0, 0.1]), np.vstack([x, x]),
                       np.vstack([uf, uf]), np.zeros((2, 4), dtype=bool))
    d = collocation_defects(tr, batched_dynamics(params))
    assert np.abs(d).max() < 1e-12


def test_defects_vanish_on_linear_dynamics_rollout(params):
    # constant input, torso in free flight: exact trajectory is polynomial
    x0 = HromState(LegJointState.zeros(), BodyState.at_rest(p=(0, 0, 8.0))).flatten()
    x0[layout.VB] = [1.0, 0.0, 0.5]
    u = InputVector.zeros()
    u.u_L[:] = 0.3  # constant joint accelerations keep the leg block quadratic
    uf = u.flatten()
    traj = rollout(x0, lambda t: uf, 1e-4, 0.4, params, method="rk4")
    idx = np.arange(0, 4001, 1000)
    tr = Transcription(traj.times[idx], traj.states[idx],
                       np.tile(uf, (5, 1)), np.zeros((5, 4), dtype=bool))
    d = collocation_defects(tr, batched_dynamics(params)).reshape(4, 42)
    # rotation stays fixed (omega = 0): every block is polynomial in time
    assert np.abs(d).max() < 1e-9


def test_defect_fourth_order_convergence(params):
    # tumbling flight with linear-in-time inputs; doubling knots -> ~16x drop
    st = HromState(LegJointState.zeros(), BodyState.at_rest(p=(0, 0, 8.0)))
    st.body.omega[:] = (1.2, -0.8, 0.5)
    st.body.v[:] = (0.5, 0.2, 1.0)
    x0 = st.flatten()

    def u_of_t(t):
        u = InputVector.zeros()
        u.u_T[:] = (2.0 * t, -1.0 * t, 30.0 * t)
        u.u_L[:] = 0.5 - 1.5 * t
        return u.flatten()

    traj = rollout(x0, u_of_t, 1e-4, 0.64, params, method="rk4")

    def max_defect(n_knots):
        idx = np.linspace(0, 6400, n_knots).astype(int)
        U = np.array([u_of_t(t) for t in traj.times[idx]])
        tr = Transcription(traj.times[idx], traj.states[idx], U,
                           np.zeros((n_knots, 4), dtype=bool))
        return np.abs(collocation_defects(tr, batched_dynamics(params))).max()

    d1, d2 = max_defect(5), max_defect(9)
    ratio = d1 / d2
    assert 8.0 < ratio < 32.0, f"ratio {ratio} (expect ~16)"


def test_boundary_residuals_zero_when_satisfied(rng):
    tr = make_transcription(rng)
    goal = GoalSpec.from_indices({33: float(tr.states[-1, 33])})
    r = boundary_residuals(tr, tr.states[0], goal)
    assert np.abs(r).max() < 1e-15
    assert r.size == 43


def test_boundary_residuals_offset_slot(rng):
    tr = make_transcription(rng)
    start = tr.states[0].copy()
    start[33] -= 0.25
    goal = GoalSpec.from_indices({})
    r = boundary_residuals(tr, start, goal)
    assert r[33] == pytest.approx(0.25, abs=1e-12)
    assert r.size == 42


def test_boundary_residuals_masking(rng):
    tr = make_transcription(rng)
    goal = GoalSpec.from_indices({35: 0.0, 40: 1.0})
    r = boundary_residuals(tr, tr.states[0], goal)
    assert r.size == 44


def default_bounds():
    return PlanBounds(thruster_xy_max=10.0, thruster_z_max=40.0, r_min=0.15, r_max=0.45)


def test_inequality_hover_rows_positive(rng, params):
    # no stance: clearance + box rows only, all positive for interior values
    tr = make_transcription(rng, n=3)
    tr.states[:, layout.PB] = [0.0, 0.0, 2.0]  # feet far above the surface
    tr.inputs[:, layout.UT] = [1.0, -2.0, 5.0]
    g = inequality_constraints(tr, 0.7, default_bounds(), Terrain(0.0), params)
    assert g.size == 3 * (4 + 6 + 8)
    assert g.min() > 0.0


def test_inequality_cone_boundary_row_zero(params):
    x = HromState(LegJointState.zeros(r=0.3), BodyState.at_rest(p=(0, 0, 0.3))).flatten()
    u = InputVector.zeros()
    u.u_g[0] = [7.0, 0.0, 10.0]
    stance = np.zeros((2, 4), dtype=bool)
    stance[:, 0] = True
    tr = Transcription(np.array([0.0, 0.1]), np.vstack([x, x]),
                       np.vstack([u.flatten(), u.flatten()]), stance)
    g = inequality_constraints(tr, 0.7, default_bounds(), Terrain(0.0), params)
    assert abs(g[0]) < 1e-12          # cone row rides the boundary
    assert g[2] == pytest.approx(10.0)  # normal-force row


def test_inequality_swing_below_surface_negative(params):
    x = HromState(LegJointState.zeros(r=0.3), BodyState.at_rest(p=(0, 0, 0.25))).flatten()
    tr = Transcription(np.array([0.0, 0.1]), np.vstack([x, x]),
                       np.zeros((2, 27)), np.zeros((2, 4), dtype=bool))
    g = inequality_constraints(tr, 0.7, default_bounds(), Terrain(0.0), params)
    assert g[:8].max() < 0.0  # all clearance rows report the dip
