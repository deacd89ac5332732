"""Back-projection, plane fitting, ego frame, and EGOD I/O."""

import numpy as np
import pytest

from egonav.errors import DegenerateGazeError, EmptyDepthError, InputFormatError, PlaneNotFoundError
from egonav.geometry import (
    CameraIntrinsics,
    DepthImage,
    GroundPlane,
    RansacConfig,
    backproject,
    build_ego_frame,
    fit_ground_plane,
    in_image,
    pitch_angle,
    project_to_image,
    read_egod,
    write_egod,
)
from egonav.synthworld import make_box, pose_from_yaw_pitch, render_depth, true_ego_frame, World


def single_pixel_depth(intr, u, v, z):
    grid = np.zeros((intr.height, intr.width))
    grid[v, u] = z
    return DepthImage(intrinsics=intr, depth=grid)


class TestBackproject:
    def test_principal_ray(self):
        intr = CameraIntrinsics(fx=100.0, fy=100.0, cx=40.0, cy=30.0, width=80, height=60)
        pts = backproject(single_pixel_depth(intr, 40, 30, 2.0))
        np.testing.assert_allclose(pts, [[0.0, 0.0, 2.0]])

    def test_unit_tangent(self):
        # pixel one focal length right of the principal point at z=1 -> x=1
        intr = CameraIntrinsics(fx=30.0, fy=30.0, cx=40.0, cy=30.0, width=80, height=60)
        pts = backproject(single_pixel_depth(intr, 70, 30, 1.0))
        np.testing.assert_allclose(pts, [[1.0, 0.0, 1.0]])

    def test_count_matches_validity(self, intr):
        rng = np.random.default_rng(0)
        grid = rng.uniform(0.5, 5.0, (intr.height, intr.width))
        grid[rng.random(grid.shape) < 0.3] = 0.0  # invalid
        depth = DepthImage(intrinsics=intr, depth=grid)
        assert backproject(depth).shape == (depth.validity.sum(), 3)

    def test_empty_raises(self, intr):
        depth = DepthImage(intrinsics=intr, depth=np.zeros((intr.height, intr.width)))
        with pytest.raises(EmptyDepthError):
            backproject(depth)

    def test_rendered_wall_backprojects_onto_plane(self, intr):
        # wall filling the whole view, nearer than any floor hit:
        # every back-projected point within 1e-6 of the z=1.5 plane
        world = World(boxes=[make_box(-30, 30, 1.5, 2.5, 40.0)],
                      bounds=(-15, 15, -10, 30), seed=0)
        pose = pose_from_yaw_pitch((0.0, 1.6, 0.0), 0.0, 0.0)
        pts = backproject(render_depth(world, pose, intr))
        assert np.abs(pts[:, 2] - 1.5).max() < 1e-6

    def test_roundtrip_projection_identity(self, intr):
        rng = np.random.default_rng(1)
        grid = rng.uniform(0.5, 10.0, (intr.height, intr.width))
        depth = DepthImage(intrinsics=intr, depth=grid)
        pts = backproject(depth)
        u, v, z = project_to_image(pts, intr)
        vv, uu = np.nonzero(depth.validity)
        np.testing.assert_allclose(u, uu, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(v, vv, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(z, grid[vv, uu], rtol=1e-9)
        assert in_image(u, v, z, intr).all()


class TestFitGroundPlane:
    def test_noise_free_plane(self):
        rng = np.random.default_rng(2)
        xz = rng.uniform(-5, 5, (500, 2))
        pts = np.column_stack([xz[:, 0], np.full(500, -1.6), xz[:, 1]])
        plane = fit_ground_plane(pts, np.array([0.0, -1.0, 0.0]), 1.6)
        np.testing.assert_allclose(plane.normal, [0.0, -1.0, 0.0], atol=1e-9)
        assert abs(plane.camera_height() - 1.6) < 1e-6

    def test_outlier_rejection_recovers_inliers(self):
        rng = np.random.default_rng(3)
        n_in, n_out = 800, 200
        xz = rng.uniform(-6, 6, (n_in, 2))
        inlier_pts = np.column_stack([xz[:, 0], np.full(n_in, -1.6), xz[:, 1]])
        outliers = rng.uniform(-6, 6, (n_out, 3))
        outliers = outliers[np.abs(outliers[:, 1] + 1.6) > 0.2]
        pts = np.vstack([inlier_pts, outliers])
        plane = fit_ground_plane(pts, np.array([0.0, -1.0, 0.0]), 1.6)
        recovered = np.abs(plane.signed_distance(inlier_pts)) < 0.05
        assert recovered.mean() >= 0.99

    def test_height_prior_disambiguates_parallel_planes(self):
        rng = np.random.default_rng(4)
        xz = rng.uniform(-5, 5, (400, 2))
        ground = np.column_stack([xz[:, 0], np.full(400, -1.6), xz[:, 1]])
        table = np.column_stack([xz[:, 0], np.full(400, -0.3), xz[:, 1]])
        plane = fit_ground_plane(np.vstack([ground, table]),
                                 np.array([0.0, -1.0, 0.0]), 1.6)
        assert abs(plane.camera_height() - 1.6) < 0.05

    def test_rigid_invariance_of_inlier_set(self):
        rng = np.random.default_rng(5)
        xz = rng.uniform(-5, 5, (300, 2))
        pts = np.column_stack([xz[:, 0], -1.6 + rng.normal(0, 0.01, 300), xz[:, 1]])
        gravity = np.array([0.0, -1.0, 0.0])
        plane_a = fit_ground_plane(pts, gravity, 1.6)
        inliers_a = np.abs(plane_a.signed_distance(pts)) < 0.05

        angle = 0.4
        rot = np.array([[np.cos(angle), -np.sin(angle), 0],
                        [np.sin(angle), np.cos(angle), 0],
                        [0, 0, 1.0]])
        shift = rot @ np.array([1.0, 0.0, 2.0]) * 0.0  # keep camera at origin
        pts_b = pts @ rot.T + shift
        plane_b = fit_ground_plane(pts_b, rot @ gravity, 1.6)
        inliers_b = np.abs(plane_b.signed_distance(pts_b)) < 0.05
        assert (inliers_a == inliers_b).all()

    def test_priors_unsatisfiable(self):
        rng = np.random.default_rng(6)
        xz = rng.uniform(-5, 5, (200, 2))
        pts = np.column_stack([xz[:, 0], np.full(200, -10.0), xz[:, 1]])
        with pytest.raises(PlaneNotFoundError):
            fit_ground_plane(pts, np.array([0.0, -1.0, 0.0]), 1.6)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_ground_plane(np.zeros((2, 3)), np.array([0, -1.0, 0]), 1.6)

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        pts = np.column_stack([rng.uniform(-5, 5, 500),
                               -1.6 + rng.normal(0, 0.02, 500),
                               rng.uniform(-5, 5, 500)])
        a = fit_ground_plane(pts, np.array([0.0, -1.0, 0.0]), 1.6)
        b = fit_ground_plane(pts, np.array([0.0, -1.0, 0.0]), 1.6)
        assert np.array_equal(a.normal, b.normal) and a.offset == b.offset


class TestEgoFrame:
    def test_level_camera(self):
        plane = GroundPlane(normal=np.array([0.0, -1.0, 0.0]), offset=1.6)
        frame = build_ego_frame(plane, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(frame.gaze, [0.0, 0.0, 1.0], atol=1e-12)
        assert frame.eye_height == pytest.approx(1.6)

    def test_pitched_30_degrees(self):
        frame = true_ego_frame(pose_from_yaw_pitch((0.0, 1.6, 0.0), 0.0, np.pi / 6))
        np.testing.assert_allclose(frame.gaze, [0.0, -0.5, np.sqrt(3) / 2], atol=1e-9)
        assert frame.eye_height == pytest.approx(1.6, abs=1e-9)

    def test_camera_center_maps_to_eye(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            d = rng.uniform(0.5, 3.0)
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            if abs(axis @ n) > 0.95:
                continue
            frame = build_ego_frame(GroundPlane(normal=n, offset=d), axis)
            np.testing.assert_allclose(frame.to_ego(np.zeros(3)),
                                       [0.0, frame.eye_height, 0.0], atol=1e-9)

    def test_axes_orthonormal_right_handed(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            if abs(axis @ n) > 0.95:
                continue
            frame = build_ego_frame(GroundPlane(normal=n, offset=1.0), axis)
            r = frame.rotation
            np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)

    def test_degenerate_gaze(self):
        plane = GroundPlane(normal=np.array([0.0, -1.0, 0.0]), offset=1.6)
        with pytest.raises(DegenerateGazeError):
            build_ego_frame(plane, np.array([0.0, -1.0, 0.0]))

    def test_negative_offset_flipped(self):
        # gravity-aligned fit orientation: camera on the negative side
        plane = GroundPlane(normal=np.array([0.0, 1.0, 0.0]), offset=-1.6)
        frame = build_ego_frame(plane, np.array([0.0, 0.0, 1.0]))
        assert frame.eye_height == pytest.approx(1.6)
        np.testing.assert_allclose(frame.gaze, [0.0, 0.0, 1.0], atol=1e-12)

    def test_eye_height_recovered_from_render(self, intr, empty_world):
        for pitch in (0.05, 0.2, 0.45):
            pose = pose_from_yaw_pitch((0.3, 1.62, -1.0), 0.3, pitch)
            depth = render_depth(empty_world, pose, intr)
            plane = fit_ground_plane(backproject(depth), pose.gravity_in_camera(), 1.62)
            frame = build_ego_frame(plane, np.array([0.0, 0.0, 1.0]))
            assert abs(frame.eye_height - 1.62) < 0.01


class TestPitchAngle:
    def test_level_gaze_is_zero(self):
        frame = true_ego_frame(pose_from_yaw_pitch((0, 1.6, 0), 0.0, 0.0))
        assert pitch_angle(frame) == pytest.approx(0.0, abs=1e-9)

    def test_30_down(self):
        frame = true_ego_frame(pose_from_yaw_pitch((0, 1.6, 0), 0.0, np.pi / 6))
        assert pitch_angle(frame) == pytest.approx(np.pi / 6, abs=1e-9)

    def test_45_down(self):
        frame = true_ego_frame(pose_from_yaw_pitch((0, 1.6, 0), 0.0, np.pi / 4))
        assert pitch_angle(frame) == pytest.approx(np.pi / 4, abs=1e-9)


class TestEgodFormat:
    def test_roundtrip(self, tmp_path, intr):
        rng = np.random.default_rng(10)
        grid = rng.uniform(0.5, 8.0, (intr.height, intr.width)).astype(np.float32)
        grid[rng.random(grid.shape) < 0.2] = 0.0
        depth = DepthImage(intrinsics=intr, depth=grid.astype(np.float64))
        path = tmp_path / "frame.egod"
        write_egod(depth, path)
        loaded = read_egod(path)
        assert loaded.intrinsics == intr
        np.testing.assert_array_equal(loaded.depth, depth.depth)
        # writing what was read is byte-identical
        path2 = tmp_path / "again.egod"
        write_egod(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_invalid_values_mean_invalid(self, tmp_path, intr):
        grid = np.full((intr.height, intr.width), 2.0)
        grid[0, 0] = 0.0
        grid[0, 1] = -3.0
        grid[0, 2] = np.inf
        depth = DepthImage(intrinsics=intr, depth=grid)
        path = tmp_path / "f.egod"
        write_egod(depth, path)
        loaded = read_egod(path)
        assert not loaded.validity[0, 0]
        assert not loaded.validity[0, 1]
        assert not loaded.validity[0, 2]
        assert loaded.validity[5, 5]

    def test_bad_magic(self, tmp_path):
        bad = tmp_path / "bad.egod"
        bad.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(InputFormatError):
            read_egod(bad)

    def test_truncated(self, tmp_path, intr):
        grid = np.full((intr.height, intr.width), 2.0)
        path = tmp_path / "t.egod"
        write_egod(DepthImage(intrinsics=intr, depth=grid), path)
        path.write_bytes(path.read_bytes()[:-17])
        with pytest.raises(InputFormatError):
            read_egod(path)
