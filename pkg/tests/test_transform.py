import numpy as np
import pytest

from usreg_sim.imgvol import (
    RigidTransform3,
    compose,
    euler_zyx,
    inverse,
    rotation_about,
    rotation_z,
    translation,
)


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_apply_worked_example():
    # Rz(90) maps (1,0,0) to (0,1,0); adding t=(1,0,0) gives (1,1,0).
    t = RigidTransform3(rotation_z(90.0), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(t.apply([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-12)


def test_identity_is_noop():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(40, 3))
    np.testing.assert_array_equal(RigidTransform3.identity().apply(pts), pts)


def test_compose_applies_inner_first():
    rng = np.random.default_rng(1)
    a = RigidTransform3(random_rotation(rng), rng.normal(size=3))
    b = RigidTransform3(random_rotation(rng), rng.normal(size=3))
    pts = rng.normal(size=(25, 3))
    np.testing.assert_allclose(compose(a, b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)


def test_inverse_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(100):
        t = RigidTransform3(random_rotation(rng), rng.normal(size=3) * 50)
        pts = rng.normal(size=(10, 3)) * 100
        np.testing.assert_allclose(inverse(t).apply(t.apply(pts)), pts, atol=1e-9)
        back = compose(t, inverse(t))
        np.testing.assert_allclose(back.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(back.translation, 0, atol=1e-9)


def test_reflection_rejected():
    with pytest.raises(ValueError):
        RigidTransform3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_non_orthonormal_rejected():
    with pytest.raises(ValueError):
        RigidTransform3(np.eye(3) * 2.0, np.zeros(3))


def test_euler_zyx_matches_axis_rotations():
    np.testing.assert_allclose(euler_zyx(90, 0, 0), rotation_z(90), atol=1e-12)
    # yaw-only rotation keeps z fixed
    r = euler_zyx(37.0, 0, 0)
    np.testing.assert_allclose(r @ [0, 0, 1], [0, 0, 1], atol=1e-12)


def test_rotation_about_fixes_center():
    center = np.array([5.0, -3.0, 2.0])
    t = rotation_about(rotation_z(33.0), center)
    np.testing.assert_allclose(t.apply(center), center, atol=1e-12)


def test_translation_factory():
    t = translation([1.0, 2.0, 3.0])
    np.testing.assert_allclose(t.apply([0.0, 0.0, 0.0]), [1.0, 2.0, 3.0])
