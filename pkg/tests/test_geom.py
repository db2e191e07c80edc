import math

import numpy as np
import pytest

from fullpose.geom import (
    EulerXYZ,
    FullPoseBox,
    GimbalLockError,
    KTooLargeError,
    MissingScoreError,
    NonHorizontalAxisError,
    NonUnitAxisError,
    PointCloud,
    RigidTransform,
    axis_angle_matrix,
    axis_angle_transform,
    bev_iou,
    box_corners,
    center_distance,
    euler_to_matrix,
    fps,
    iou3d,
    matrix_to_euler,
    nms,
    points_in_box,
    to_euler_xy,
    transform_box,
)

import oracles


def box(center, dims, tx=0.0, ty=0.0, tz=0.0, class_id=1, score=None):
    return FullPoseBox(np.array(center, float), np.array(dims, float),
                       EulerXYZ(tx, ty, tz), class_id=class_id, score=score)


class TestEulerMatrix:
    def test_identity(self):
        assert np.allclose(euler_to_matrix(EulerXYZ()), np.eye(3))

    def test_quarter_turn_yaw_maps_x_to_y(self):
        rot = euler_to_matrix(EulerXYZ(0, 0, math.pi / 2))
        assert np.allclose(rot @ [1, 0, 0], [0, 1, 0], atol=1e-15)

    def test_matches_single_axis_product(self):
        got = euler_to_matrix(EulerXYZ(0.1, 0.2, 0.3))
        assert np.allclose(got, oracles.euler_matrix_oracle(0.1, 0.2, 0.3), atol=1e-15)

    def test_orthonormal_on_random_inputs(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            e = EulerXYZ(*rng.uniform(-math.pi, math.pi, 3))
            rot = euler_to_matrix(e)
            assert np.abs(rot @ rot.T - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(rot) - 1.0) < 1e-9

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            tx, tz = rng.uniform(-math.pi, math.pi, 2)
            ty = rng.uniform(-(math.pi / 2 - 0.05), math.pi / 2 - 0.05)
            rot = euler_to_matrix(EulerXYZ(tx, ty, tz))
            back = euler_to_matrix(matrix_to_euler(rot))
            assert np.abs(back - rot).max() < 1e-9

    def test_identity_round_trip(self):
        e = matrix_to_euler(np.eye(3))
        assert (e.theta_x, e.theta_y, e.theta_z) == (0.0, 0.0, 0.0)

    def test_gimbal_lock_raises(self):
        rot = euler_to_matrix(EulerXYZ(0.3, math.pi / 2, 0.1))
        with pytest.raises(GimbalLockError):
            matrix_to_euler(rot)


class TestAxisAngle:
    def test_zero_angle_is_identity(self):
        t = axis_angle_transform([0, 1, 0], 0.0, [5, 2, 0])
        assert np.allclose(t.rotation, np.eye(3))

    def test_hand_rodrigues_quarter_turn(self):
        t = axis_angle_transform([0, 1, 0], math.pi / 2, [0, 0, 0])
        assert np.allclose(t.apply([1.0, 0.0, 0.0]), [0, 0, -1], atol=1e-15)

    def test_pivot_is_fixed(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            alpha = rng.uniform(0, 2 * math.pi)
            v = np.array([-math.sin(alpha), math.cos(alpha), 0])
            pivot = rng.uniform(-10, 10, 3)
            pivot[2] = 0.0
            t = axis_angle_transform(v, rng.uniform(-1, 1), pivot)
            assert np.allclose(t.apply(pivot), pivot, atol=1e-12)
            assert np.allclose(t.apply(pivot + v), pivot + v, atol=1e-12)

    def test_isometry_on_random_cloud(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-20, 20, (100, 3))
        t = axis_angle_transform([0, 1, 0], 0.4, [3, 0, 0])
        moved = t.apply(pts)
        d_before = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        d_after = np.linalg.norm(moved[:, None] - moved[None, :], axis=2)
        assert np.abs(d_before - d_after).max() < 1e-9

    def test_bad_axis_errors(self):
        with pytest.raises(NonUnitAxisError):
            axis_angle_transform([0, 2, 0], 0.1, [0, 0, 0])
        with pytest.raises(NonHorizontalAxisError):
            axis_angle_transform([0, 0, 1], 0.1, [0, 0, 0])


class TestToEulerXY:
    def test_roll_axis(self):
        tx, ty = to_euler_xy([1, 0, 0], 0.2)
        assert abs(tx - 0.2) < 1e-12 and abs(ty) < 1e-12

    def test_pitch_axis(self):
        tx, ty = to_euler_xy([0, 1, 0], 0.2)
        assert abs(tx) < 1e-12 and abs(ty - 0.2) < 1e-12

    def test_diagonal_axis_matches_decomposition(self):
        v = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
        e = matrix_to_euler(axis_angle_matrix(v, 0.3))
        tx, ty = to_euler_xy(v, 0.3)
        assert (tx, ty) == (e.theta_x, e.theta_y)

    def test_tilt_plus_residual_yaw_reconstructs_rotation(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            alpha = rng.uniform(0, 2 * math.pi)
            v = np.array([-math.sin(alpha), math.cos(alpha), 0.0])
            gamma = rng.uniform(-1.3, 1.3)
            rot = axis_angle_matrix(v, gamma)
            e = matrix_to_euler(rot)
            tx, ty = to_euler_xy(v, gamma)
            rebuilt = euler_to_matrix(EulerXYZ(tx, ty, e.theta_z))
            assert np.abs(rebuilt - rot).max() < 1e-9


class TestBoxCorners:
    def test_unit_cube(self):
        got = box_corners(box([0, 0, 0], [1, 1, 1]))
        want = {(sx, sy, sz) for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)}
        assert {tuple(np.round(c, 12)) for c in got} == want

    def test_yaw_quarter_turn_same_corner_set(self):
        a = box_corners(box([0, 0, 0], [1, 1, 1]))
        b = box_corners(box([0, 0, 0], [1, 1, 1], tz=math.pi / 2))
        set_a = {tuple(np.round(c, 9)) for c in a}
        set_b = {tuple(np.round(c, 9)) for c in b}
        assert set_a == set_b

    def test_rotated_offsets_match_direct_application(self):
        b = box([1, 2, 3], [2, 1, 1], tz=0.3)
        rot = oracles.rot_z(0.3)
        offsets = np.array(
            [[sx, sy, sz] for sz in (-0.5, 0.5) for sy in (-0.5, 0.5) for sx in (-0.5, 0.5)]
        ) * [2, 1, 1]
        want = {tuple(np.round(rot @ o + [1, 2, 3], 12)) for o in offsets}
        got = {tuple(np.round(c, 12)) for c in box_corners(b)}
        assert got == want


class TestPointsInBox:
    def test_center_inside(self):
        b = box([1, 2, 3], [2, 1, 4], 0.2, -0.1, 0.5)
        assert points_in_box(np.array([[1.0, 2.0, 3.0]]), b)[0]

    def test_corners_inside_closed_boundary(self):
        b = box([0, 0, 0], [2, 3, 1], 0.1, 0.2, 0.3)
        assert points_in_box(box_corners(b), b).all()

    def test_against_explicit_inverse_oracle(self):
        rng = np.random.default_rng(6)
        b = box([1, -2, 0.5], [4, 2, 1.5], 0.15, -0.1, 2.1)
        pts = rng.uniform(-4, 4, (1000, 3)) + b.center
        want = oracles.points_in_box_oracle(pts, b.center, b.dims, 0.15, -0.1, 2.1)
        got = points_in_box(pts, b)
        assert np.array_equal(got, want)

    def test_invariant_under_shared_rigid_transform(self):
        rng = np.random.default_rng(7)
        b = box([2, 1, 0], [3, 1.5, 1.2], 0.05, 0.1, 0.7)
        pts = rng.uniform(-3, 3, (500, 3)) + b.center
        before = points_in_box(pts, b)
        t = RigidTransform(rotation=euler_to_matrix(EulerXYZ(0.1, -0.2, 1.1)),
                           pivot=np.array([5.0, -1.0, 2.0]))
        after = points_in_box(t.apply(pts), transform_box(b, t))
        assert np.array_equal(before, after)


class TestBevIou:
    def test_identical_boxes(self):
        b = box([3, 1, 0], [4, 2, 1.5], tz=0.7)
        assert bev_iou(b, b) == 1.0

    def test_axis_aligned_squares(self):
        a = box([0, 0, 0], [2, 2, 1])
        b = box([1, 0, 0], [2, 2, 1])
        assert abs(bev_iou(a, b) - 1.0 / 3.0) < 1e-12

    def test_square_quarter_turn(self):
        a = box([0, 0, 0], [2, 2, 1])
        b = box([0, 0, 0], [2, 2, 1], tz=math.pi / 2)
        assert abs(bev_iou(a, b) - 1.0) < 1e-12

    def test_against_shapely(self):
        shapely = pytest.importorskip("shapely.geometry")
        rng = np.random.default_rng(8)
        for _ in range(200):
            a = box(rng.uniform(-2, 2, 3), rng.uniform(0.5, 4, 3), tz=rng.uniform(0, 2 * math.pi))
            b = box(rng.uniform(-2, 2, 3), rng.uniform(0.5, 4, 3), tz=rng.uniform(0, 2 * math.pi))

            def poly(bb):
                l, w = bb.dims[:2]
                local = [(l / 2, w / 2), (-l / 2, w / 2), (-l / 2, -w / 2), (l / 2, -w / 2)]
                rot = oracles.rot_z(bb.euler.theta_z)[:2, :2]
                return shapely.Polygon([tuple(rot @ p + bb.center[:2]) for p in local])

            pa, pb = poly(a), poly(b)
            inter = pa.intersection(pb).area
            union = pa.area + pb.area - inter
            assert abs(bev_iou(a, b) - inter / union) < 1e-9

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            a = box(rng.uniform(-3, 3, 3), rng.uniform(0.5, 3, 3), tz=rng.uniform(0, 7))
            b = box(rng.uniform(-3, 3, 3), rng.uniform(0.5, 3, 3), tz=rng.uniform(0, 7))
            ab, ba = bev_iou(a, b), bev_iou(b, a)
            assert abs(ab - ba) < 1e-12
            assert 0.0 <= ab <= 1.0


class TestIou3d:
    def test_identical_cubes(self):
        b = box([1, 1, 1], [1, 1, 1])
        assert iou3d(b, b) == 1.0

    def test_half_overlapping_cubes(self):
        a = box([0, 0, 0], [1, 1, 1])
        b = box([0, 0, 0.5], [1, 1, 1])
        assert abs(iou3d(a, b) - 1.0 / 3.0) < 1e-12

    def test_monte_carlo_spot_check(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            a = box(rng.uniform(-1, 1, 3), rng.uniform(0.8, 3, 3), tz=rng.uniform(0, 7))
            b = box(a.center + rng.uniform(-1, 1, 3), rng.uniform(0.8, 3, 3), tz=rng.uniform(0, 7))
            approx = oracles.monte_carlo_iou3d(a, b, 200_000, rng)
            assert abs(iou3d(a, b) - approx) < 0.02

    def test_symmetry(self):
        a = box([0, 0, 0], [2, 1, 1], tz=0.4)
        b = box([0.5, 0.2, 0.1], [1.5, 1.2, 0.8], tz=1.9)
        assert abs(iou3d(a, b) - iou3d(b, a)) < 1e-12


class TestCenterDistance:
    def test_zero_for_identical(self):
        b = box([1, 2, 3], [1, 1, 1])
        assert center_distance(b, b) == 0.0

    def test_unit_offset(self):
        assert center_distance(box([0, 0, 0], [1, 1, 1]), box([1, 0, 0], [1, 1, 1])) == 1.0

    def test_three_four_five(self):
        a = box([1, 2, 2], [1, 1, 1])
        b = box([2, 4, 4], [1, 1, 1])
        assert abs(center_distance(a, b) - 3.0) < 1e-12
        assert abs(center_distance(a, b, bev=True) - math.sqrt(5)) < 1e-12


class TestNms:
    def test_identical_pair_keeps_higher_score(self):
        boxes = [box([0, 0, 0], [2, 2, 1], score=0.9), box([0, 0, 0], [2, 2, 1], score=0.8)]
        assert list(nms(boxes, 0.1)) == [0]

    def test_disjoint_boxes_kept(self):
        boxes = [box([0, 0, 0], [1, 1, 1], score=0.5), box([10, 0, 0], [1, 1, 1], score=0.9)]
        assert list(nms(boxes, 0.1)) == [1, 0]

    def test_equal_scores_tie_break_to_lower_index(self):
        boxes = [box([0, 0, 0], [2, 2, 1], score=0.5), box([0.1, 0, 0], [2, 2, 1], score=0.5)]
        assert list(nms(boxes, 0.1)) == [0]

    def test_missing_score(self):
        with pytest.raises(MissingScoreError):
            nms([box([0, 0, 0], [1, 1, 1])], 0.5)

    def test_matches_reference_on_random_sets(self):
        rng = np.random.default_rng(11)
        boxes = [
            box(rng.uniform(-8, 8, 3), rng.uniform(1, 4, 3), tz=rng.uniform(0, 7),
                score=round(float(rng.random()), 3))
            for _ in range(50)
        ]
        want = oracles.nms_oracle(boxes, 0.1, bev_iou)
        assert list(nms(boxes, 0.1)) == want


class TestFps:
    def test_k_equals_n_returns_all(self):
        pts = np.random.default_rng(12).uniform(0, 1, (10, 3))
        assert sorted(fps(pts, 10)) == list(range(10))

    def test_collinear_points(self):
        pts = np.array([[x, 0.0, 0.0] for x in range(10)])
        assert list(fps(pts, 3)) == [0, 9, 4]

    def test_matches_reference(self):
        rng = np.random.default_rng(13)
        pts = rng.uniform(-5, 5, (256, 3))
        assert list(fps(pts, 32)) == oracles.fps_oracle(pts, 32)

    def test_weighted_matches_reference(self):
        rng = np.random.default_rng(14)
        pts = rng.uniform(-5, 5, (128, 3))
        weights = rng.uniform(0.1, 2.0, 128)
        assert list(fps(pts, 16, weights)) == oracles.fps_oracle(pts, 16, weights)

    def test_k_too_large(self):
        with pytest.raises(KTooLargeError):
            fps(np.zeros((4, 3)), 5)

    def test_accepts_point_cloud(self):
        cloud = PointCloud(np.array([[0, 0, 0], [4, 0, 0], [1, 0, 0]], float))
        assert list(fps(cloud, 2)) == [0, 1]
