from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudrecon.errors import InvalidInputError
from cloudrecon.posecore import (
    POSE_ROW_LAYOUT,
    CameraIntrinsics,
    Quaternion,
    RigidTransform,
    SceneBounds,
    build_pose_row,
    is_rotation,
    parse_pose_row,
    quat_conjugate,
    quat_delta,
    quat_mul,
    quat_to_rotmat,
    rotational_fix,
    rotmat_to_quat,
    truncate_view_matrix,
    undo_rotational_fix,
)


def left_matrix(q):
    """4x4 matrix L(q) with L(q) @ r == q * r (independent of quat_mul)."""
    a, b, c, d = q
    return np.array([[a, -b, -c, -d], [b, a, -d, c], [c, d, a, -b], [d, -c, b, a]])


def random_unit(rng):
    v = rng.normal(size=4)
    return Quaternion.from_array(v / np.linalg.norm(v))


def rotate_by_sandwich(q, v):
    """Rotate v via q v q^-1 using the left-matrix oracle only."""
    qa = q.as_array()
    conj = qa * np.array([1, -1, -1, -1])
    pure = np.concatenate([[0.0], v])
    return (left_matrix(left_matrix(qa) @ pure) @ conj)[1:]


unit_quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3
).map(lambda v: Quaternion.from_array(np.array(v) / np.linalg.norm(v)))


def test_conjugate_examples():
    assert quat_conjugate(Quaternion(1, 0, 0, 0)) == Quaternion(1, 0, 0, 0)
    assert quat_conjugate(Quaternion(0.5, 0.5, 0.5, 0.5)) == Quaternion(0.5, -0.5, -0.5, -0.5)


def test_conjugate_is_inverse_for_unit():
    rng = np.random.default_rng(1)
    for _ in range(200):
        q = random_unit(rng)
        np.testing.assert_allclose(quat_mul(q, quat_conjugate(q)).as_array(), [1, 0, 0, 0], atol=1e-12)


def test_mul_identity_and_basis():
    r = Quaternion(0.1, -0.2, 0.3, 0.4)
    assert quat_mul(Quaternion.identity(), r) == r
    assert quat_mul(Quaternion(0, 1, 0, 0), Quaternion(0, 0, 1, 0)) == Quaternion(0, 0, 0, 1)


def test_mul_matches_matrix_oracle():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        q, r = rng.normal(size=4), rng.normal(size=4)
        got = quat_mul(Quaternion.from_array(q), Quaternion.from_array(r)).as_array()
        np.testing.assert_allclose(got, left_matrix(q) @ r, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(unit_quats, unit_quats, unit_quats)
def test_mul_associative_and_norm_multiplicative(q, r, s):
    lhs = quat_mul(quat_mul(q, r), s).as_array()
    rhs = quat_mul(q, quat_mul(r, s)).as_array()
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    assert abs(quat_mul(q, r).norm() - q.norm() * r.norm()) <= 1e-12


def test_delta_examples():
    rng = np.random.default_rng(3)
    q = random_unit(rng)
    np.testing.assert_allclose(quat_delta(q, q).as_array(), [1, 0, 0, 0], atol=1e-12)
    z90 = Quaternion.from_axis_angle((0, 0, 1), math.pi / 2)
    assert quat_delta(z90, Quaternion.identity()) == z90
    for _ in range(200):
        t, c = random_unit(rng), random_unit(rng)
        np.testing.assert_allclose(quat_mul(quat_delta(t, c), c).as_array(), t.as_array(), atol=1e-12)


def test_delta_rejects_non_unit_current():
    with pytest.raises(InvalidInputError):
        quat_delta(Quaternion.identity(), Quaternion(2, 0, 0, 0))


def test_quat_to_rotmat_examples():
    np.testing.assert_array_equal(quat_to_rotmat(Quaternion.identity()), np.eye(3))
    h = math.sqrt(2) / 2
    np.testing.assert_allclose(
        quat_to_rotmat(Quaternion(h, 0, 0, h)), [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12
    )
    with pytest.raises(InvalidInputError):
        quat_to_rotmat(Quaternion(0, 0, 0, 0))


def test_quat_to_rotmat_matches_sandwich_and_double_cover():
    rng = np.random.default_rng(4)
    for _ in range(300):
        q = random_unit(rng)
        R = quat_to_rotmat(q)
        oracle = np.column_stack([rotate_by_sandwich(q, e) for e in np.eye(3)])
        np.testing.assert_allclose(R, oracle, atol=1e-12)
        np.testing.assert_allclose(R, quat_to_rotmat(-q), atol=1e-15)
        assert is_rotation(R)


def test_rotmat_to_quat_examples():
    assert rotmat_to_quat(np.eye(3)) == Quaternion(1, 0, 0, 0)
    q = rotmat_to_quat(np.diag([1.0, -1.0, -1.0]))
    np.testing.assert_allclose(q.as_array(), [0, 1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(quat_to_rotmat(q), np.diag([1.0, -1.0, -1.0]), atol=1e-15)
    with pytest.raises(InvalidInputError):
        rotmat_to_quat(np.diag([1.0, 1.0, 2.0]))
    with pytest.raises(InvalidInputError):
        rotmat_to_quat(np.diag([1.0, 1.0, -1.0]))


def test_rotmat_round_trip_10k():
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        q = random_unit(rng)
        back = rotmat_to_quat(quat_to_rotmat(q))
        expected = q if q.a >= 0 else -q
        np.testing.assert_allclose(back.as_array(), expected.as_array(), atol=1e-9)
        assert back.a >= 0


def test_truncate_view_matrix():
    np.testing.assert_array_equal(truncate_view_matrix(np.eye(4)), np.hstack([np.eye(3), np.zeros((3, 1))]))
    M = np.eye(4)
    M[:3, 3] = (1, 2, 3)
    np.testing.assert_array_equal(truncate_view_matrix(M), [[1, 0, 0, 1], [0, 1, 0, 2], [0, 0, 1, 3]])
    rng = np.random.default_rng(6)
    T = RigidTransform.from_quaternion(random_unit(rng), rng.normal(size=3))
    assert is_rotation(truncate_view_matrix(T.matrix())[:, :3])
    bad = np.eye(4)
    bad[3, 0] = 0.5
    with pytest.raises(InvalidInputError):
        truncate_view_matrix(bad)


def test_rotational_fix_identity_example():
    np.testing.assert_array_equal(rotational_fix(np.eye(3)), [[0, 1, 0], [-1, 0, 0], [0, 0, 1]])


def test_rotational_fix_column_operations_symbolically():
    R = np.arange(1.0, 10.0).reshape(3, 3)
    fixed = rotational_fix(R)
    np.testing.assert_array_equal(fixed[:, 0], -R[:, 1])
    np.testing.assert_array_equal(fixed[:, 1], R[:, 0])
    np.testing.assert_array_equal(fixed[:, 2], R[:, 2])
    np.testing.assert_array_equal(undo_rotational_fix(fixed), R)


def test_rotational_fix_preserves_det_and_orthonormality():
    rng = np.random.default_rng(7)
    for _ in range(10_000 // 10):
        R = quat_to_rotmat(random_unit(rng))
        F = rotational_fix(R)
        assert abs(np.linalg.det(F) - np.linalg.det(R)) <= 1e-12
        assert is_rotation(F)


IDENTITY_ROW = [1, 0, 0, 0, 512, 0, 1, 0, 0, 512, 0, 0, 1, 0, 500, 0.5, 2]


def test_build_pose_row_identity_readoff():
    row = build_pose_row(np.hstack([np.eye(3), np.zeros((3, 1))]), CameraIntrinsics(512, 512, 500), SceneBounds(0.5, 2))
    np.testing.assert_array_equal(row, IDENTITY_ROW)


def test_pose_row_layout_matches_printed_sequence():
    printed = "r11 r12 r13 tx h r21 r22 r23 ty w r31 r32 r33 tz f m M".split()
    assert list(POSE_ROW_LAYOUT) == printed
    view = np.array([[11, 12, 13, 1], [21, 22, 23, 2], [31, 32, 33, 3]], dtype=float)
    row = build_pose_row(view, CameraIntrinsics(100, 200, 300), SceneBounds(4, 5))
    values = {"tx": 1, "ty": 2, "tz": 3, "h": 100, "w": 200, "f": 300, "m": 4, "M": 5}
    for i, name in enumerate(printed):
        expected = values.get(name, float(name[1:]) if name.startswith("r") else None)
        assert row[i] == expected, name
    assert POSE_ROW_LAYOUT.index("f") == 14


def test_parse_pose_row_examples():
    view, k, b = parse_pose_row(IDENTITY_ROW)
    np.testing.assert_array_equal(view, np.hstack([np.eye(3), np.zeros((3, 1))]))
    assert k == CameraIntrinsics(512, 512, 500)
    assert b == SceneBounds(0.5, 2)
    bad = list(IDENTITY_ROW)
    bad[15], bad[16] = 3.0, 2.0
    with pytest.raises(InvalidInputError, match="15"):
        parse_pose_row(bad)
    bad = list(IDENTITY_ROW)
    bad[7] = float("nan")
    with pytest.raises(InvalidInputError, match="index 7"):
        parse_pose_row(bad)


def test_pose_row_round_trip_random():
    rng = np.random.default_rng(8)
    for _ in range(500):
        T = RigidTransform.from_quaternion(random_unit(rng), rng.normal(size=3))
        k = CameraIntrinsics(*rng.uniform(1, 2000, size=3))
        lo = rng.uniform(0.01, 5)
        b = SceneBounds(lo, lo + rng.uniform(0, 5))
        row = build_pose_row(T.view(), k, b)
        view, k2, b2 = parse_pose_row(row)
        np.testing.assert_array_equal(view, T.view())
        assert (k2, b2) == (k, b)
        np.testing.assert_array_equal(build_pose_row(view, k2, b2), row)


def test_rigid_transform_algebra():
    rng = np.random.default_rng(9)
    A = RigidTransform.from_quaternion(random_unit(rng), rng.normal(size=3))
    B = RigidTransform.from_quaternion(random_unit(rng), rng.normal(size=3))
    np.testing.assert_allclose((A @ B).matrix(), A.matrix() @ B.matrix(), atol=1e-12)
    assert (A @ A.inverse()).allclose(RigidTransform.identity())
    with pytest.raises(InvalidInputError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
