import numpy as np
import pytest

from thrusterquad import layout
from thrusterquad.contact import ContactParams, Terrain
from thrusterquad.model import (BodyParams, BodyState, HromState, InputVector,
                                LegJointState, energies)
from thrusterquad.simulate import SimulationAbort, euler_step, rk4_step, rollout
from thrusterquad.spatial import is_rotation


def resting_state(p=(0.0, 0.0, 5.0)):
    return HromState(LegJointState.zeros(), BodyState.at_rest(p=p)).flatten()


def tumbling_state():
    st = HromState(LegJointState.zeros(), BodyState.at_rest(p=(0, 0, 5.0)))
    st.body.omega[:] = (2.0, -1.0, 1.5)
    st.body.v[:] = (1.0, 0.5, 2.0)
    return st.flatten()


def hover_input(params):
    u = InputVector.zeros()
    u.u_T[:] = -params.mass * params.gravity
    return u.flatten()


def test_euler_step_fixed_point(params):
    x = resting_state()
    x_next = euler_step(x, hover_input(params), 0.01, params)
    np.testing.assert_allclose(x_next, x, atol=1e-15)


def test_euler_step_free_fall_rate(params):
    x = resting_state()
    x_next = euler_step(x, np.zeros(layout.NU), 0.01, params)
    assert x_next[41] == pytest.approx(-0.0981, abs=1e-12)


def test_euler_step_local_truncation_quadratic(params):
    # one step vs two half steps differ at O(dt^2): quarter on halving
    x = tumbling_state()
    u = np.zeros(layout.NU)

    def defect(dt):
        one = euler_step(x, u, dt, params)
        two = euler_step(euler_step(x, u, dt / 2, params), u, dt / 2, params)
        return np.abs(one - two).max()

    ratio = defect(0.02) / defect(0.01)
    assert 3.2 < ratio < 4.8


def _integrate(step, x, u, dt, n, params):
    for _ in range(n):
        x = step(x, u, dt, params)
    return x


def test_euler_global_error_first_order(params):
    # global error over a fixed horizon halves with the step
    x = tumbling_state()
    u = np.zeros(layout.NU)
    ref = _integrate(rk4_step, x, u, 1e-4, 2000, params)
    e1 = np.abs(_integrate(euler_step, x, u, 2e-3, 100, params) - ref).max()
    e2 = np.abs(_integrate(euler_step, x, u, 1e-3, 200, params) - ref).max()
    assert 1.8 < e1 / e2 < 2.2


def test_rk4_step_fixed_point(params):
    x = resting_state()
    np.testing.assert_allclose(rk4_step(x, hover_input(params), 0.01, params), x, atol=1e-12)


def test_rk4_ballistic_matches_closed_form(params):
    x = resting_state()
    x[layout.VB] = [0.0, 0.0, 1.0]
    traj_z = x[35]
    dt, n = 0.01, 100
    for _ in range(n):
        x = rk4_step(x, np.zeros(layout.NU), dt, params)
    t = dt * n
    closed = traj_z + 1.0 * t - 0.5 * 9.81 * t * t
    assert abs(x[35] - closed) < 1e-8


def test_rk4_global_error_fourth_order(params):
    x = tumbling_state()
    u = np.zeros(layout.NU)
    ref = _integrate(rk4_step, x, u, 5e-4, 400, params)
    e1 = np.abs(_integrate(rk4_step, x, u, 2e-2, 10, params) - ref).max()
    e2 = np.abs(_integrate(rk4_step, x, u, 1e-2, 20, params) - ref).max()
    assert 12.0 < e1 / e2 < 20.0


def test_step_rejects_bad_dt(params):
    with pytest.raises(ValueError):
        euler_step(resting_state(), np.zeros(layout.NU), 0.0, params)


def test_rollout_ballistic_matches_closed_form(params):
    x0 = resting_state()
    x0[layout.VB] = [1.0, 0.0, 2.0]
    traj = rollout(x0, lambda t: np.zeros(layout.NU), 1e-3, 0.5, params, method="rk4")
    t = traj.times[-1]
    assert abs(traj.states[-1, 33] - (0.0 + 1.0 * t)) < 1e-9
    assert abs(traj.states[-1, 35] - (5.0 + 2.0 * t - 0.5 * 9.81 * t * t)) < 1e-8


def test_rollout_standing_force_balance(params):
    st = HromState(LegJointState.zeros(r=0.3), BodyState.at_rest(p=(0, 0, 0.2997)))
    traj = rollout(st.flatten(), lambda t: np.zeros(layout.NU), 1e-3, 2.0, params)
    total = traj.grf_terrain[-1, :, 2].sum()
    weight = params.mass * 9.81
    assert abs(total - weight) / weight < 0.01
    assert np.abs(traj.states[-1, layout.VB]).max() < 1e-3


def test_rollout_determinism(params):
    x0 = tumbling_state()
    a = rollout(x0, lambda t: np.zeros(layout.NU), 1e-3, 0.3, params)
    b = rollout(x0, lambda t: np.zeros(layout.NU), 1e-3, 0.3, params)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.grf_world, b.grf_world)


def test_rollout_rotation_invariants_hold(params):
    x0 = tumbling_state()
    traj = rollout(x0, lambda t: np.zeros(layout.NU), 1e-3, 1.0, params)
    for k in range(0, len(traj.times), 100):
        assert is_rotation(layout.rotation_from_state(traj.states[k]))


def test_rollout_lengths_and_validation(params):
    x0 = resting_state()
    traj = rollout(x0, lambda t: np.zeros(layout.NU), 1e-3, 0.25, params)
    assert len(traj.states) == 251
    assert len(traj.inputs) == 250
    assert len(traj.grf_world) == 251
    with pytest.raises(ValueError):
        rollout(x0, lambda t: np.zeros(layout.NU), 1e-3, 0.2505, params)


def test_rollout_unplanned_touchdown_event(params):
    # drop onto the ground while the schedule claims all feet are swinging
    st = HromState(LegJointState.zeros(r=0.3), BodyState.at_rest(p=(0, 0, 0.31)))
    traj = rollout(st.flatten(), lambda t: np.zeros(layout.NU), 1e-3, 0.5, params,
                   stance_schedule=lambda t: np.zeros(4, dtype=bool))
    kinds = {e["type"] for e in traj.events}
    assert "unplanned_touchdown" in kinds


def test_rollout_abort_dumps_state(params):
    # unstable joint acceleration blows the leg coordinate to overflow
    u = np.zeros(layout.NU)

    def schedule(t):
        out = u.copy()
        out[2] = 1e180
        return out

    x0 = resting_state()
    with pytest.raises(SimulationAbort) as info:
        rollout(x0, schedule, 1e-3, 0.5, params)
    assert info.value.step >= 0
    assert np.all(np.isfinite(info.value.state))


def test_energy_accounting_with_contact(params):
    # touchdown dissipates energy: K+V never grows beyond its start
    st = HromState(LegJointState.zeros(r=0.3), BodyState.at_rest(p=(0, 0, 0.33)))
    traj = rollout(st.flatten(), lambda t: np.zeros(layout.NU), 1e-4, 1.0,
                   params, method="rk4")
    e = traj.kinetic + traj.potential
    assert e.max() <= e[0] + 1e-6
