from __future__ import annotations

import numpy as np
import pytest

from cloudrecon.alignment import (
    align_point_sets,
    align_tables,
    apply_transform,
    center,
    difference_matrix,
    solve_three_vector_transform,
    umeyama_similarity,
)
from cloudrecon.capture import generate_orbit
from cloudrecon.codec import PoseBoundsTable
from cloudrecon.errors import DegenerateError, ValidationError
from cloudrecon.posecore import (
    CameraIntrinsics,
    Quaternion,
    RigidTransform,
    SceneBounds,
    build_pose_row,
    quat_to_rotmat,
    rotational_fix,
)


def random_rotation(rng):
    v = rng.normal(size=4)
    return quat_to_rotmat(Quaternion.from_array(v / np.linalg.norm(v)))


def test_center_examples():
    pts, c = center([(1, 1, 1), (-1, -1, -1)])
    np.testing.assert_array_equal(pts, [(1, 1, 1), (-1, -1, -1)])
    np.testing.assert_array_equal(c, 0)
    pts, c = center([(3, 4, 5)])
    np.testing.assert_array_equal(pts, [(0, 0, 0)])
    np.testing.assert_array_equal(c, (3, 4, 5))
    rng = np.random.default_rng(0)
    for _ in range(20):
        pts, _ = center(rng.normal(size=(int(rng.integers(1, 40)), 3)) * 100)
        assert np.abs(pts.sum(axis=0)).max() <= 1e-12 * max(1, len(pts)) * 100


def test_three_vector_solve_examples():
    np.testing.assert_allclose(solve_three_vector_transform(np.eye(3), np.eye(3)), np.eye(3), atol=1e-15)
    rng = np.random.default_rng(1)
    R = random_rotation(rng)
    src = rng.normal(size=(3, 3))
    T = solve_three_vector_transform(src, 2.0 * src @ R.T)
    assert abs(np.linalg.det(T) - 8.0) <= 1e-9
    np.testing.assert_allclose(apply_transform(T, src), 2.0 * src @ R.T, atol=1e-12)
    coplanar = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]])
    with pytest.raises(DegenerateError):
        solve_three_vector_transform(coplanar, np.eye(3))


def test_apply_transform_examples():
    pts = np.random.default_rng(2).normal(size=(10, 3))
    np.testing.assert_array_equal(apply_transform(np.eye(3), pts), pts)
    np.testing.assert_array_equal(apply_transform(np.zeros((3, 3)), pts), 0)


def test_full_set_alignment_and_umeyama_agree():
    rng = np.random.default_rng(3)
    R, t = random_rotation(rng), rng.normal(size=3)
    src = rng.normal(size=(50, 3))
    dst = 2.0 * src @ R.T + t
    al = align_point_sets(src, dst)
    assert np.abs(al(src) - dst).max() <= 1e-9
    s, R2, t2 = umeyama_similarity(src, dst)
    assert abs(s - 2.0) <= 1e-9
    np.testing.assert_allclose(R2, R, atol=1e-9)
    np.testing.assert_allclose(t2, t, atol=1e-9)
    np.testing.assert_allclose(al.transform, s * R2, atol=1e-6)
    assert abs(al.scale - 2.0) <= 1e-9


def test_umeyama_identity_and_degenerate():
    pts = np.random.default_rng(4).normal(size=(8, 3))
    s, R, t = umeyama_similarity(pts, pts)
    assert abs(s - 1) < 1e-12
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(t, 0, atol=1e-12)
    line = np.outer(np.arange(5.0), (1, 2, 3))
    with pytest.raises(DegenerateError):
        umeyama_similarity(line, line)


def test_umeyama_residual_beats_three_vector_solve_on_noise():
    rng = np.random.default_rng(5)
    for _ in range(10):
        R, t = random_rotation(rng), rng.normal(size=3)
        src = rng.normal(size=(30, 3))
        dst = 1.5 * src @ R.T + t + rng.normal(scale=0.01, size=src.shape)
        s, R2, t2 = umeyama_similarity(src, dst)
        ls = ((dst - (s * src @ R2.T + t2)) ** 2).sum()
        al = align_point_sets(src, dst)
        three = ((dst - al(src)) ** 2).sum()
        assert ls <= three + 1e-12


def pose_table(track, k=CameraIntrinsics(512, 512, 700)):
    rows = []
    for pose in track:
        view = pose.view()
        view[:, :3] = rotational_fix(view[:, :3])
        rows.append(build_pose_row(view, k, SceneBounds(1, 3)))
    return PoseBoundsTable(np.array(rows))


def test_difference_matrix_examples():
    table = pose_table(generate_orbit(6, 2.0, 0.3))
    d = difference_matrix(table, table)
    assert d.values.shape == (6, 12) and not d.values.any() and d.norm == 0.0
    rows = table.rows.copy()
    rows[2, 3] += 0.5
    rows[2, 0] -= 0.25
    d = difference_matrix(table, PoseBoundsTable(rows))
    assert np.flatnonzero(d.row_norms).tolist() == [2]
    assert d.norm == pytest.approx((0.5**2 + 0.25**2) ** 0.5, abs=1e-15)
    with pytest.raises(ValidationError):
        difference_matrix(table, PoseBoundsTable(rows[:3]))


def test_difference_matrix_hand_computed_two_rows():
    a = np.zeros((2, 17))
    b = np.zeros((2, 17))
    a[0, 0], a[1, 13], a[1, 4] = 3.0, 4.0, 99.0  # index 4 (h) is not a view slot
    d = difference_matrix(PoseBoundsTable(a), PoseBoundsTable(b))
    assert d.norm == 5.0
    assert d.values[0, 0] == 3.0 and d.values[1, 11] == 4.0


def test_align_tables_recovers_colmap_like_reference():
    rng = np.random.default_rng(6)
    track = generate_orbit(12, 2.0, 0.4)
    table = pose_table(track)
    # reference frame: rotated, scaled by 0.5 and shifted
    R, t, s = random_rotation(rng), rng.normal(size=3), 0.5
    ref_track = [RigidTransform(R @ p.rotation, s * R @ p.translation + t) for p in track]
    aligned, al = align_tables(table, pose_table(ref_track))
    assert difference_matrix(table, aligned).norm <= 1e-9
    assert abs(al.scale - 2.0) <= 1e-9
    assert al.method == "least-squares"  # a level orbit is coplanar
    assert "total" in difference_matrix(table, aligned).to_csv()


def test_align_tables_three_vector_path_on_non_planar_track():
    rng = np.random.default_rng(7)
    track = [RigidTransform(random_rotation(rng), rng.normal(size=3)) for _ in range(20)]
    table = pose_table(track)
    R, t = random_rotation(rng), rng.normal(size=3)
    ref_track = [RigidTransform(R @ p.rotation, 0.5 * R @ p.translation + t) for p in track]
    aligned, al = align_tables(table, pose_table(ref_track))
    assert al.method == "three-vector"
    assert difference_matrix(table, aligned).norm <= 1e-9
