import numpy as np
import pytest

from conftest import random_pose
from tagreg.errors import AngleNearPi, FormatError
from tagreg.geometry import (
    Pose,
    Twist,
    apply,
    compose,
    exp_rotation,
    format_pose,
    inverse,
    log_rotation,
    parse_pose,
    pose_ominus,
    retract,
    rotation_is_valid,
)


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def test_apply_identity():
    assert np.allclose(apply(Pose.identity(), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_apply_pure_translation():
    p = Pose(np.eye(3), np.array([0.0, 0.0, 5.0]))
    assert np.allclose(apply(p, np.zeros(3)), [0.0, 0.0, 5.0])


def test_apply_rotation_90z():
    p = Pose(rot_z(np.pi / 2), np.zeros(3))
    assert np.allclose(apply(p, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)


def test_compose_identity_and_inverse_identity():
    rng = np.random.default_rng(0)
    p = random_pose(rng)
    q = compose(p, Pose.identity())
    assert np.allclose(q.r, p.r) and np.allclose(q.t, p.t)
    e = inverse(Pose.identity())
    assert np.allclose(e.r, np.eye(3)) and np.allclose(e.t, 0.0)


def test_inverse_composition_property():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = random_pose(rng, trans_scale=10.0)
        e = compose(inverse(p), p)
        assert np.allclose(e.r, np.eye(3), atol=1e-9)
        assert np.allclose(e.t, 0.0, atol=1e-9)


def test_compose_associative_and_apply_consistency():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a, b, c = (random_pose(rng) for _ in range(3))
        lhs = compose(compose(a, b), c)
        rhs = compose(a, compose(b, c))
        assert np.allclose(lhs.r, rhs.r, atol=1e-9)
        assert np.allclose(lhs.t, rhs.t, atol=1e-9)
        x = rng.normal(size=3)
        assert np.allclose(apply(compose(a, b), x), apply(a, apply(b, x)), atol=1e-9)


def test_log_rotation_identity_and_axis():
    assert np.allclose(log_rotation(np.eye(3)), 0.0)
    xi = log_rotation(rot_z(np.pi / 2))
    assert np.allclose(xi, [0.0, 0.0, np.pi / 2], atol=1e-12)


def test_exp_rotation_closed_forms():
    assert np.allclose(exp_rotation(np.zeros(3)), np.eye(3))
    assert np.allclose(exp_rotation([0.0, 0.0, np.pi / 2]), rot_z(np.pi / 2), atol=1e-12)


def test_exp_log_round_trip_1000():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        theta = rng.uniform(1e-12, np.pi - 0.01)
        r = exp_rotation(theta * axis)
        assert rotation_is_valid(r)
        assert np.allclose(exp_rotation(log_rotation(r)), r, atol=1e-9)


def test_log_exp_round_trip_on_twists():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        xi = rng.normal(size=3)
        norm = np.linalg.norm(xi)
        if norm >= np.pi - 0.02:
            xi *= (np.pi - 0.02) / norm
        assert np.allclose(log_rotation(exp_rotation(xi)), xi, atol=1e-9)


def test_log_rotation_small_angle_series():
    xi = np.array([1e-9, -2e-9, 5e-10])
    assert np.allclose(log_rotation(exp_rotation(xi)), xi, atol=1e-15)


def test_log_rotation_near_pi_raises():
    axis = np.array([1.0, 0.0, 0.0])
    r = exp_rotation((np.pi - 1e-8) * axis)
    with pytest.raises(AngleNearPi):
        log_rotation(r)


def test_pose_ominus_same_pose_is_zero():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = random_pose(rng)
        d = pose_ominus(p, p)
        assert np.all(d.trans == 0.0)
        assert np.all(np.abs(d.rot) < 1e-12)


def test_pose_ominus_pure_translation():
    rng = np.random.default_rng(6)
    b = random_pose(rng)
    a = compose(b, Pose(np.eye(3), np.array([0.0, 0.0, 1.0])))
    d = pose_ominus(a, b)
    assert np.allclose(d.rot, 0.0, atol=1e-12)
    assert np.allclose(d.trans, [0.0, 0.0, 1.0], atol=1e-12)


def test_pose_ominus_ordering_rotation_first():
    b = Pose.identity()
    a = Pose(rot_z(0.3), np.array([1.0, 2.0, 3.0]))
    v = pose_ominus(a, b).vector()
    assert np.allclose(v[:3], [0.0, 0.0, 0.3], atol=1e-12)
    assert np.allclose(v[3:], [1.0, 2.0, 3.0], atol=1e-12)


def test_retraction_monotone_along_geodesic():
    rng = np.random.default_rng(7)
    a = random_pose(rng)
    b = random_pose(rng)
    delta = pose_ominus(a, b).vector()
    norms = []
    for k in range(1, 11):
        a_k = retract(b, (k / 10.0) * delta)
        norms.append(pose_ominus(a_k, b).norm())
    assert all(n1 < n2 for n1, n2 in zip(norms, norms[1:]))
    end = retract(b, delta)
    assert np.allclose(end.r, a.r, atol=1e-9) and np.allclose(end.t, a.t, atol=1e-9)


def test_retract_zero_and_translation():
    rng = np.random.default_rng(8)
    p = random_pose(rng)
    q = retract(p, Twist.zero())
    assert np.allclose(q.r, p.r) and np.allclose(q.t, p.t)
    q = retract(Pose.identity(), np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]))
    assert np.allclose(q.r, np.eye(3)) and np.allclose(q.t, [1.0, 0.0, 0.0])


def test_retract_ominus_consistency():
    rng = np.random.default_rng(9)
    for _ in range(100):
        p = random_pose(rng)
        delta = rng.uniform(-1e-3, 1e-3, 6)
        d = pose_ominus(retract(p, delta), p).vector()
        assert np.allclose(d, delta, atol=1e-8)


def test_pose_text_round_trip():
    rng = np.random.default_rng(10)
    for _ in range(20):
        p = random_pose(rng, trans_scale=100.0)
        q = parse_pose(format_pose(p))
        assert np.allclose(q.r, p.r, atol=1e-15)
        assert np.allclose(q.t, p.t, atol=1e-12)


def test_parse_pose_scientific_notation():
    line = "1 0 0 1e-3 0 1 0 -2.5E+1 0 0 1 0.0"
    p = parse_pose(line)
    assert np.allclose(p.t, [1e-3, -25.0, 0.0])


def test_parse_pose_rejects_bad_input():
    with pytest.raises(FormatError):
        parse_pose("1 2 3")
    with pytest.raises(FormatError):
        parse_pose("2 0 0 0 0 2 0 0 0 0 2 0")  # not orthonormal
    with pytest.raises(FormatError):
        parse_pose("1 0 0 x 0 1 0 0 0 0 1 0")
