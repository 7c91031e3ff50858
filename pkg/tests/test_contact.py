import numpy as np
import pytest
from hypothesis import given, strategies as st

from thrusterquad import layout
from thrusterquad.contact import (CONE_SENTINEL, ContactParams, Terrain,
                                  friction_cone_margin, ground_force,
                                  stribeck_coefficient, terrain_to_world,
                                  world_to_terrain)
from thrusterquad.model import BodyParams, BodyState, HromState, LegJointState
from thrusterquad.simulate import rollout


def test_params_validation():
    with pytest.raises(ValueError):
        ContactParams(k1=0.0)
    with pytest.raises(ValueError):
        ContactParams(v_s=0.0)
    with pytest.raises(ValueError):
        ContactParams(mu_c=0.0)
    # mu_s below mu_c is allowed; either ordering is physical
    ContactParams(mu_c=0.8, mu_s=0.5)


def test_stribeck_at_rest_is_static():
    cp = ContactParams(mu_c=0.6, mu_s=0.7)
    assert stribeck_coefficient(0.0, cp) == pytest.approx(0.7, abs=1e-15)


def test_stribeck_fast_limit_is_coulomb():
    cp = ContactParams(mu_c=0.6, mu_s=0.7, v_s=0.05)
    assert abs(stribeck_coefficient(100 * cp.v_s, cp) - 0.6) < 1e-12


def test_stribeck_equal_coefficients_constant():
    cp = ContactParams(mu_c=0.65, mu_s=0.65)
    for v in (0.0, 0.01, 1.0, 50.0):
        assert stribeck_coefficient(v, cp) == pytest.approx(0.65, abs=1e-15)


@given(st.floats(0, 100))
def test_stribeck_bounded_between_coefficients(v):
    cp = ContactParams(mu_c=0.6, mu_s=0.9, v_s=0.1)
    s = stribeck_coefficient(v, cp)
    assert min(cp.mu_c, cp.mu_s) - 1e-12 <= s <= max(cp.mu_c, cp.mu_s) + 1e-12


def test_stribeck_monotone_grid():
    cp = ContactParams(mu_c=0.6, mu_s=0.9, v_s=0.1)
    v = np.linspace(0.0, 10 * cp.v_s, 1000)
    s = np.array([stribeck_coefficient(x, cp) for x in v])
    assert np.all(np.diff(s) <= 1e-15)  # decays from mu_s toward mu_c


def test_ground_force_above_surface():
    cp = ContactParams()
    np.testing.assert_array_equal(ground_force([0, 0, 0.01], [0, 0, 0], cp), np.zeros(3))


def test_ground_force_static_spring():
    cp = ContactParams(k1=1e4)
    f = ground_force([0, 0, -0.001], [0, 0, 0], cp)
    np.testing.assert_allclose(f, [0, 0, 10.0], atol=1e-12)


def test_ground_force_sliding_scalar_case():
    # k1=1e4, k2=0, mu_c=0.7, mu_s=0.9, mu_v=0.1, v_s=0.1, vx=0.5:
    # u_z = 10, s_x = 0.7 - (0.7-0.9) exp(-25), u_x = -s_x*10 - 0.05
    cp = ContactParams(k1=1e4, k2=0.0, mu_c=0.7, mu_s=0.9, mu_v=0.1, v_s=0.1)
    f = ground_force([0, 0, -0.001], [0.5, 0, 0], cp)
    s_x = 0.7 - (0.7 - 0.9) * np.exp(-25.0)
    expected_x = -s_x * 10.0 - 0.1 * 0.5
    assert f[2] == pytest.approx(10.0, abs=1e-12)
    assert f[0] == pytest.approx(expected_x, abs=1e-12)
    assert f[0] == pytest.approx(-7.05, abs=1e-3)
    assert f[1] == pytest.approx(0.0, abs=1e-15)


def test_ground_force_clamps_adhesion():
    # rapidly separating foot: damper would pull, clamp keeps F_z at zero
    cp = ContactParams(k1=1e4, k2=1e3)
    f = ground_force([0, 0, -0.0001], [0, 0, 5.0], cp)
    assert f[2] == 0.0
    np.testing.assert_array_equal(f[:2], [0, 0])


def test_cone_margin_interior():
    assert friction_cone_margin([0, 0, 10.0], 0.7) == pytest.approx(7.0)


def test_cone_margin_boundary():
    assert friction_cone_margin([7.0, 0, 10.0], 0.7) == pytest.approx(0.0, abs=1e-12)


def test_cone_margin_zero_force_vacuous():
    assert friction_cone_margin([0.0, 0.0, 0.0], 0.7) == 0.0


def test_cone_margin_sentinel():
    assert friction_cone_margin([1.0, 0.0, -2.0], 0.7) == CONE_SENTINEL


def test_terrain_slope_bounds():
    with pytest.raises(ValueError):
        Terrain(-0.1)
    with pytest.raises(ValueError):
        Terrain(np.pi / 2)


def test_world_to_terrain_flat_identity(rng):
    t = Terrain(0.0)
    p = rng.normal(size=3)
    np.testing.assert_allclose(world_to_terrain(p, t), p, atol=1e-15)


def test_world_to_terrain_45deg():
    t = Terrain(np.radians(45.0))
    out = world_to_terrain([1.0, 0.0, 0.0], t)
    c = np.cos(np.radians(45.0))
    np.testing.assert_allclose(out, [c, 0.0, -c], atol=1e-12)


def test_terrain_roundtrip(rng):
    t = Terrain(np.radians(23.0))
    for _ in range(50):
        p = rng.normal(size=3)
        np.testing.assert_allclose(terrain_to_world(world_to_terrain(p, t), t),
                                   p, atol=1e-12)


def test_drop_settles_at_static_penetration():
    # point mass on one foot below the COM; others folded out of reach
    params = BodyParams(hip_offsets=np.zeros((4, 3)))
    legs = LegJointState.zeros(r=0.3)
    legs.phi[1:] = np.pi
    st = HromState(legs, BodyState.at_rest(p=(0, 0, 0.35)))
    cp = ContactParams()
    traj = rollout(st.flatten(), lambda t: np.zeros(layout.NU), 1e-3, 3.0,
                   params, contact_params=cp)
    speed = np.abs(traj.states[-1, layout.VB]).max()
    assert speed < 1e-4
    fz = traj.grf_terrain[-1, :, 2].sum()
    weight = params.mass * 9.81
    assert abs(fz - weight) / weight < 0.01
    penetration = -(traj.states[-1, 35] - 0.3)
    assert abs(penetration - weight / cp.k1) / (weight / cp.k1) < 0.02
