import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventmvs.event_io import Calibration, Event, TrajectorySample, ValidationError
from eventmvs.geometry import (
    DegenerateGeometryError,
    DepthPlanes,
    Homography,
    OutOfRangeError,
    Pose,
    backproject_to_plane,
    compute_homography,
    compute_prop_coeffs,
    distort_pixels,
    interpolate_pose,
    make_depth_planes,
    matrix_to_quat,
    quat_to_matrix,
    rotation_about,
    undistort_event,
    undistort_pixels,
)


def random_pose(rng, max_t=0.3, max_angle=0.2) -> Pose:
    axis = rng.normal(size=3)
    return Pose(rotation_about(axis, rng.uniform(-max_angle, max_angle)), rng.uniform(-max_t, max_t, 3))


class TestUndistort:
    def test_zero_coefficients_identity(self, cal):
        e = Event(17, 33, 0.5, 1)
        assert undistort_event(e, cal) == Event(17.0, 33.0, 0.5, 1)

    def test_principal_point_fixed(self):
        c = Calibration(240, 180, 200, 200, 120, 90, (-0.3, 0, 0, 0, 0))
        x, y = undistort_pixels(120.0, 90.0, c)
        assert (x, y) == (120.0, 90.0)

    def test_dense_lookup_oracle(self):
        c = Calibration(240, 180, 200, 200, 120, 90, (-0.3, 0, 0, 0, 0))
        target = (c.cx + 50.0, c.cy)
        # forward-distort a 0.01 px grid of ideal pixels and invert by nearest lookup
        gx, gy = np.meshgrid(np.arange(165.0, 180.0, 0.01), np.arange(85.0, 95.0, 0.01))
        dx, dy = distort_pixels(gx, gy, c)
        k = np.argmin((dx - target[0]) ** 2 + (dy - target[1]) ** 2)
        oracle = gx.ravel()[k], gy.ravel()[k]
        x, y = undistort_pixels(*target, c)
        assert abs(x - oracle[0]) <= 0.05 and abs(y - oracle[1]) <= 0.05

    def test_inverts_forward_model(self):
        c = Calibration(240, 180, 200, 200, 120, 90, (-0.08, 0.02, 0.001, -0.001, 0.0))
        ys, xs = np.mgrid[0:180:7, 0:240:7]
        ux, uy = undistort_pixels(xs.ravel(), ys.ravel(), c)
        rx, ry = distort_pixels(ux, uy, c)
        assert np.abs(rx - xs.ravel()).max() < 0.01
        assert np.abs(ry - ys.ravel()).max() < 0.01

    def test_timestamp_and_polarity_untouched(self):
        c = Calibration(240, 180, 200, 200, 120, 90, (-0.1, 0, 0, 0, 0))
        e = undistort_event(Event(3, 4, 1.25, -1), c)
        assert e.t == 1.25 and e.p == -1

    def test_clamped_to_q_coord_range(self):
        c = Calibration(240, 180, 50, 50, 120, 90, (-0.9, 0, 0, 0, 0))
        x, y = undistort_pixels(np.array([0.0, 239.0]), np.array([0.0, 179.0]), c)
        assert np.all(np.abs(x) <= 255) and np.all(np.abs(y) <= 255)


class TestInterpolatePose:
    def test_knot_exact(self):
        q = tuple(matrix_to_quat(rotation_about([0, 1, 0], 0.3)))
        traj = [TrajectorySample(0.0, (0, 0, 0), (0, 0, 0, 1)), TrajectorySample(1.0, (1, 2, 3), q)]
        p = interpolate_pose(traj, 1.0)
        assert np.array_equal(p.translation, [1, 2, 3])
        assert np.array_equal(p.rotation, quat_to_matrix(q))

    def test_translation_midpoint(self):
        traj = [TrajectorySample(0.0, (0, 0, 0), (0, 0, 0, 1)), TrajectorySample(2.0, (2, 0, 0), (0, 0, 0, 1))]
        p = interpolate_pose(traj, 1.0)
        np.testing.assert_allclose(p.translation, [1, 0, 0])
        np.testing.assert_allclose(p.rotation, np.eye(3))

    def test_slerp_midpoint(self):
        q90 = (0, 0, math.sin(math.pi / 4), math.cos(math.pi / 4))
        traj = [TrajectorySample(0.0, (0, 0, 0), (0, 0, 0, 1)), TrajectorySample(1.0, (0, 0, 0), q90)]
        p = interpolate_pose(traj, 0.5)
        np.testing.assert_allclose(p.rotation, rotation_about([0, 0, 1], math.pi / 4), atol=1e-12)

    def test_out_of_range(self):
        traj = [TrajectorySample(0.0, (0, 0, 0), (0, 0, 0, 1)), TrajectorySample(1.0, (0, 0, 0), (0, 0, 0, 1))]
        with pytest.raises(OutOfRangeError):
            interpolate_pose(traj, 1.5)
        with pytest.raises(OutOfRangeError):
            interpolate_pose(traj, -0.1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 1))
    def test_rotations_orthonormal(self, seed, t):
        rng = np.random.default_rng(seed)
        qs = rng.normal(size=(2, 4))
        qs /= np.linalg.norm(qs, axis=1, keepdims=True)
        traj = [TrajectorySample(0.0, (0, 0, 0), tuple(qs[0])), TrajectorySample(1.0, (1, 0, 0), tuple(qs[1]))]
        R = interpolate_pose(traj, t).rotation
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9


class TestPose:
    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValidationError):
            Pose(np.diag([1.0, 1.0, 1.1]), np.zeros(3))

    def test_reflection_rejected(self):
        with pytest.raises(ValidationError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_inverse_compose(self, rng):
        p = random_pose(rng)
        ident = p.compose(p.inverse())
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(ident.translation, 0, atol=1e-12)


class TestHomography:
    def test_coincident_cameras_identity(self, cal, rng):
        for _ in range(5):
            p = random_pose(rng)
            H = compute_homography(p, p, cal, float(rng.uniform(0.5, 5)))
            np.testing.assert_allclose(H.m, np.eye(3), atol=1e-12)

    def test_axial_translation(self, cal):
        z0, dz = 2.0, 0.5
        H = compute_homography(Pose(np.eye(3), [0, 0, dz]), Pose.identity(), cal, z0)
        s = (z0 - dz) / z0
        expect = np.array([[s, 0, cal.cx * (1 - s)], [0, s, cal.cy * (1 - s)], [0, 0, 1]])
        np.testing.assert_allclose(H.m, expect, atol=1e-12)
        # the virtual-to-event direction scales by z0 / (z0 - dz)
        H_ve = np.linalg.inv(H.m)
        H_ve /= H_ve[2, 2]
        np.testing.assert_allclose(H_ve[0, 0], z0 / (z0 - dz), rtol=1e-12)

    def test_ray_plane_oracle(self, cal, rng):
        ev, ref = random_pose(rng), random_pose(rng)
        x = rng.uniform(0, cal.w, 100)
        y = rng.uniform(0, cal.h, 100)
        u, v, w = compute_homography(ev, ref, cal, 2.0).apply(x, y)
        ox, oy = backproject_to_plane(x, y, ev, ref, cal, 2.0)
        assert np.abs(u / w - ox).max() < 1e-6
        assert np.abs(v / w - oy).max() < 1e-6

    def test_plane_through_camera_centre(self, cal):
        with pytest.raises(DegenerateGeometryError):
            compute_homography(Pose(np.eye(3), [0, 0, 1.0]), Pose.identity(), cal, 1.0)

    def test_singular_matrix_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            Homography(np.ones((3, 3)))

    def test_normalized(self):
        H = Homography(np.diag([2.0, 2.0, 2.0]))
        assert H.m[2, 2] == 1.0


class TestPropCoeffs:
    def test_zero_baseline(self, cal, rng):
        R = rotation_about(rng.normal(size=3), 0.1)
        planes = make_depth_planes(0.8, 2.5, 20)
        phi = compute_prop_coeffs(Pose(R, [0.1, 0.2, 0.3]), Pose(np.eye(3), [0.1, 0.2, 0.3]), cal, planes)
        np.testing.assert_allclose(phi.a, 1, atol=1e-15)
        np.testing.assert_allclose(phi.bx, 0, atol=1e-12)
        np.testing.assert_allclose(phi.by, 0, atol=1e-12)

    def test_canonical_plane_exact(self, cal, rng):
        planes = make_depth_planes(0.8, 2.5, 50)
        for _ in range(20):
            phi = compute_prop_coeffs(random_pose(rng), random_pose(rng), cal, planes)
            assert phi.a[0] == 1.0 and phi.bx[0] == 0.0 and phi.by[0] == 0.0

    def test_lateral_example(self, cal):
        planes = DepthPlanes([1.0, 2.0])
        ev = Pose(np.eye(3), [0.1, 0, 0])
        phi = compute_prop_coeffs(ev, Pose.identity(), cal, planes)
        assert phi.a[1] == pytest.approx(1.0, abs=1e-15)
        assert phi.bx[1] == pytest.approx(-10.0, abs=1e-12)
        assert phi.by[1] == 0.0
        # cross-check against the direct 3-D construction
        x = np.array([10.0, 120.0, 230.5])
        y = np.array([5.0, 90.0, 170.25])
        u, v, w = compute_homography(ev, Pose.identity(), cal, 1.0).apply(x, y)
        xi, yi = phi.apply(u / w, v / w)
        ox, oy = backproject_to_plane(x, y, ev, Pose.identity(), cal, 2.0)
        assert np.abs(xi[1] - ox).max() < 1e-9 and np.abs(yi[1] - oy).max() < 1e-9

    def test_camera_on_canonical_plane(self, cal):
        planes = make_depth_planes(1.0, 2.0, 4)
        with pytest.raises(DegenerateGeometryError):
            compute_prop_coeffs(Pose(np.eye(3), [0, 0, 1.0]), Pose.identity(), cal, planes)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_two_step_matches_direct(self, seed):
        rng = np.random.default_rng(seed)
        cal = Calibration(240, 180, 200.0, 200.0, 120.0, 90.0)
        planes = make_depth_planes(0.8, 2.5, 30)
        ev, ref = random_pose(rng), random_pose(rng)
        x = rng.uniform(0, 240, 1000)
        y = rng.uniform(0, 180, 1000)
        u, v, w = compute_homography(ev, ref, cal, planes.z0).apply(x, y)
        xi, yi = compute_prop_coeffs(ev, ref, cal, planes).apply(u / w, v / w)
        for i in (0, 7, 29):
            ox, oy = backproject_to_plane(x, y, ev, ref, cal, planes.depths[i])
            assert np.abs(xi[i] - ox).max() < 1e-6
            assert np.abs(yi[i] - oy).max() < 1e-6


class TestDepthPlanes:
    def test_endpoints(self):
        np.testing.assert_array_equal(make_depth_planes(1, 2, 2).depths, [1.0, 2.0])

    def test_closed_form(self):
        np.testing.assert_allclose(make_depth_planes(1, 3, 3).depths, [1.0, 1.5, 3.0], rtol=1e-14)

    def test_hundred_planes(self):
        d = make_depth_planes(0.5, 5, 100).depths
        assert len(d) == 100 and d[0] == 0.5 and d[-1] == 5.0
        assert np.all(np.diff(d) > 0)
        np.testing.assert_allclose(np.diff(1 / d), np.diff(1 / d)[0], rtol=1e-9)

    def test_canonical_is_nearest(self):
        p = make_depth_planes(0.8, 2.5, 10)
        assert p.canonical_index == 0 and p.z0 == 0.8

    @pytest.mark.parametrize("args", [(0, 1, 3), (2, 1, 3), (1, 2, 1), (-1, 2, 3)])
    def test_invalid(self, args):
        with pytest.raises(ValidationError):
            make_depth_planes(*args)
