import numpy as np
import pytest
from hypothesis import given, strategies as st

from thrusterquad.spatial import (is_rotation, reorthonormalize, rot_x, rot_y,
                                  rotation_derivative, skew)

finite_vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


def test_skew_zero():
    assert np.array_equal(skew([0.0, 0.0, 0.0]), np.zeros((3, 3)))


def test_skew_unit_axis_cross():
    np.testing.assert_allclose(skew([1, 0, 0]) @ [0, 1, 0], [0, 0, 1], atol=1e-15)


def test_skew_self_cross_vanishes():
    v = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(skew(v) @ v, np.zeros(3), atol=1e-15)


@given(finite_vec, finite_vec)
def test_skew_antisymmetry_property(v, w):
    np.testing.assert_allclose(skew(v) @ w, -(skew(w) @ v), atol=1e-9)
    assert np.array_equal(skew(v).T, -skew(v))


def test_rot_x_zero_is_identity():
    np.testing.assert_allclose(rot_x(0.0), np.eye(3), atol=1e-15)


def test_rot_y_quarter_turn():
    np.testing.assert_allclose(rot_y(np.pi / 2) @ [0, 0, -1], [-1, 0, 0], atol=1e-15)


def test_rot_x_inverse():
    np.testing.assert_allclose(rot_x(0.7) @ rot_x(-0.7), np.eye(3), atol=1e-15)


@given(st.floats(-10, 10))
def test_rotation_factories_stay_in_so3(angle):
    assert is_rotation(rot_x(angle))
    assert is_rotation(rot_y(angle))


def test_rotation_derivative_zero_rate():
    assert np.array_equal(rotation_derivative(rot_x(0.3), np.zeros(3)), np.zeros((3, 3)))


def test_rotation_derivative_identity_frame():
    np.testing.assert_allclose(rotation_derivative(np.eye(3), [0, 0, 1]),
                               skew([0, 0, 1]), atol=1e-15)


def test_rotation_derivative_trace_property(rng):
    # Rdot^T R is skew-symmetric, so its trace vanishes
    for _ in range(20):
        from conftest import random_rotation
        R = random_rotation(rng)
        om = rng.normal(size=3)
        rd = rotation_derivative(R, om)
        assert abs(np.trace(rd.T @ R)) < 1e-12


def test_reorthonormalize_idempotent():
    R = rot_x(0.4) @ rot_y(-1.1)
    np.testing.assert_allclose(reorthonormalize(R), R, atol=1e-12)


def test_reorthonormalize_removes_scaling():
    np.testing.assert_allclose(reorthonormalize(1.01 * np.eye(3)), np.eye(3), atol=1e-12)


def test_reorthonormalize_restores_invariants(rng):
    from conftest import random_rotation
    for _ in range(50):
        R = random_rotation(rng) + 1e-3 * rng.normal(size=(3, 3))
        out = reorthonormalize(R)
        assert is_rotation(out)


def test_reorthonormalize_rejects_singular():
    with pytest.raises(ValueError):
        reorthonormalize(np.zeros((3, 3)))
