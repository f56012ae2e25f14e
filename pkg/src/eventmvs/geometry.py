"""Camera model, distortion correction, pose interpolation and plane-sweep maps.

Conventions: a :class:`Pose` maps camera coordinates to world coordinates,
``X_world = R @ X_cam + t``. The virtual (reference) camera shares the event
camera's intrinsics and has no distortion. Depth planes are fronto-parallel in
the virtual camera: ``Z_virtual = Z_i``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .event_io import Calibration, Event, TrajectorySample, ValidationError

UNDISTORT_ITERATIONS = 8
COORD_CLAMP = 255.0


class DegenerateGeometryError(ValueError):
    pass


class OutOfRangeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Rotations and poses


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix from a (qx, qy, qz, qw) quaternion; normalizes first."""
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def rotation_about(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    s = math.sin(angle / 2)
    return quat_to_matrix([axis[0] * s, axis[1] * s, axis[2] * s, math.cos(angle / 2)])


def slerp(q0, q1, u: float) -> np.ndarray:
    """Shortest-path spherical interpolation between (x, y, z, w) quaternions."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 0.9995:
        q = q0 + u * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = math.acos(min(dot, 1.0))
    s = math.sin(theta)
    q = (math.sin((1 - u) * theta) / s) * q0 + (math.sin(u * theta) / s) * q1
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValidationError("pose rotation must be orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, q, position) -> "Pose":
        return cls(quat_to_matrix(q), position)

    @property
    def position(self) -> np.ndarray:
        return self.translation

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def transform(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"Pose(t={self.translation.tolist()})"


def interpolate_pose(traj: Sequence[TrajectorySample], t: float) -> Pose:
    """Pose at time ``t``: linear in position, slerp in orientation. No extrapolation."""
    if not traj:
        raise OutOfRangeError("empty trajectory")
    if t < traj[0].t or t > traj[-1].t:
        raise OutOfRangeError(f"t={t} outside trajectory range [{traj[0].t}, {traj[-1].t}]")
    j = bisect.bisect_left(traj, t, key=lambda s: s.t)
    if traj[j].t == t:
        s = traj[j]
        return Pose.from_quaternion(s.orientation, s.position)
    a, b = traj[j - 1], traj[j]
    u = (t - a.t) / (b.t - a.t)
    pos = (1 - u) * np.asarray(a.position) + u * np.asarray(b.position)
    return Pose.from_quaternion(slerp(a.orientation, b.orientation, u), pos)


# ---------------------------------------------------------------------------
# Distortion


def distort_normalized(x, y, dist):
    k1, k2, p1, p2, k3 = dist
    r2 = x * x + y * y
    radial = 1 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return xd, yd


def distort_pixels(x, y, cal: Calibration):
    """Ideal pinhole pixels -> distorted sensor pixels."""
    xn = (np.asarray(x, dtype=np.float64) - cal.cx) / cal.fx
    yn = (np.asarray(y, dtype=np.float64) - cal.cy) / cal.fy
    xd, yd = distort_normalized(xn, yn, cal.dist)
    return xd * cal.fx + cal.cx, yd * cal.fy + cal.cy


def undistort_pixels(x, y, cal: Calibration):
    """Vectorized inverse of :func:`distort_pixels` by fixed-point iteration."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not any(cal.dist):
        return x.copy(), y.copy()
    k1, k2, p1, p2, k3 = cal.dist
    xd = (x - cal.cx) / cal.fx
    yd = (y - cal.cy) / cal.fy
    xu, yu = xd, yd
    for _ in range(UNDISTORT_ITERATIONS):
        r2 = xu * xu + yu * yu
        radial = 1 + k1 * r2 + k2 * r2 * r2 + k3 * r2 * r2 * r2
        dx = 2 * p1 * xu * yu + p2 * (r2 + 2 * xu * xu)
        dy = p1 * (r2 + 2 * yu * yu) + 2 * p2 * xu * yu
        xu = (xd - dx) / radial
        yu = (yd - dy) / radial
    xo = np.clip(xu * cal.fx + cal.cx, -COORD_CLAMP, COORD_CLAMP)
    yo = np.clip(yu * cal.fy + cal.cy, -COORD_CLAMP, COORD_CLAMP)
    return xo, yo


def undistort_event(e: Event, cal: Calibration) -> Event:
    x, y = undistort_pixels(e.x, e.y, cal)
    return Event(float(x), float(y), e.t, e.p)


# ---------------------------------------------------------------------------
# Depth planes and plane-induced maps


@dataclass(frozen=True, eq=False)
class DepthPlanes:
    depths: np.ndarray
    canonical_index: int = 0

    def __post_init__(self):
        d = np.array(self.depths, dtype=np.float64)
        if d.ndim != 1 or len(d) < 2 or np.any(np.diff(d) <= 0):
            raise ValidationError("depth planes must be a strictly increasing list of >= 2 depths")
        if self.canonical_index != 0:
            raise ValidationError("the canonical plane is the nearest plane (index 0)")
        d.setflags(write=False)
        object.__setattr__(self, "depths", d)

    def __len__(self) -> int:
        return len(self.depths)

    @property
    def z0(self) -> float:
        return float(self.depths[self.canonical_index])

    @property
    def inverse_spacing(self) -> float:
        """Uniform step in 1/Z between neighbouring planes."""
        return float(abs(1.0 / self.depths[0] - 1.0 / self.depths[-1]) / (len(self.depths) - 1))


def make_depth_planes(z_min: float, z_max: float, n: int) -> DepthPlanes:
    """``n`` planes uniformly spaced in inverse depth, nearest first."""
    if not (0 < z_min < z_max) or n < 2:
        raise ValidationError("need 0 < z_min < z_max and n >= 2")
    inv = np.linspace(1.0 / z_min, 1.0 / z_max, n)
    depths = 1.0 / inv
    depths[0] = z_min
    depths[-1] = z_max
    return DepthPlanes(depths)


@dataclass(frozen=True, eq=False)
class Homography:
    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2]) > 1e-9:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise DegenerateGeometryError("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def apply(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self.m
        u = m[0, 0] * x + m[0, 1] * y + m[0, 2]
        v = m[1, 0] * x + m[1, 1] * y + m[1, 2]
        w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        return u, v, w


def relative_pose(event_pose: Pose, ref_pose: Pose):
    """Return ``(R, t, C)`` with ``X_event = R @ X_virtual + t``.

    ``C`` is the event-camera centre expressed in the virtual frame.
    """
    Re, te = event_pose.rotation, event_pose.translation
    Rv, tv = ref_pose.rotation, ref_pose.translation
    R = Re.T @ Rv
    t = Re.T @ (tv - te)
    C = Rv.T @ (te - tv)
    return R, t, C


def compute_homography(event_pose: Pose, ref_pose: Pose, cal: Calibration, z0: float) -> Homography:
    """Map from event-camera pixels to virtual-camera pixels through the plane ``Z = z0``."""
    if z0 <= 0:
        raise ValidationError("canonical plane depth must be positive")
    R, t, C = relative_pose(event_pose, ref_pose)
    if abs(z0 - C[2]) <= 1e-9:
        raise DegenerateGeometryError("canonical plane passes through the event camera centre")
    n = np.array([0.0, 0.0, 1.0])
    # Points on n.X = z0 satisfy X_e = (R + t n^T / z0) X_v.
    H_ve = cal.K @ (R + np.outer(t, n) / z0) @ cal.K_inv
    try:
        H = np.linalg.inv(H_ve)
    except np.linalg.LinAlgError:
        raise DegenerateGeometryError("plane-induced homography is singular") from None
    return Homography(H)


@dataclass(frozen=True, eq=False)
class PropCoeffs:
    """Per-plane affine maps ``x_i = a_i (x_0 - cx) + bx_i + cx`` (same for y)."""

    a: np.ndarray
    bx: np.ndarray
    by: np.ndarray
    cx: float
    cy: float

    def __len__(self) -> int:
        return len(self.a)

    @classmethod
    def identity(cls, n: int, cx: float, cy: float) -> "PropCoeffs":
        return cls(np.ones(n), np.zeros(n), np.zeros(n), cx, cy)

    def apply(self, x0, y0):
        """Return ``(nz, n)`` arrays of plane coordinates for canonical points ``x0, y0``."""
        x0 = np.asarray(x0, dtype=np.float64)
        y0 = np.asarray(y0, dtype=np.float64)
        xi = self.a[:, None] * (x0[None, :] - self.cx) + self.bx[:, None] + self.cx
        yi = self.a[:, None] * (y0[None, :] - self.cy) + self.by[:, None] + self.cy
        return xi, yi


def compute_prop_coeffs(event_pose: Pose, ref_pose: Pose, cal: Calibration, planes: DepthPlanes) -> PropCoeffs:
    _, _, C = relative_pose(event_pose, ref_pose)
    z0 = planes.z0
    denom = z0 - C[2]
    if abs(denom) <= 1e-9:
        raise DegenerateGeometryError("event camera lies on the canonical plane")
    Z = planes.depths
    mu = (Z - C[2]) / denom
    a = mu * z0 / Z
    bx = cal.fx * C[0] * (1 - mu) / Z
    by = cal.fy * C[1] * (1 - mu) / Z
    i0 = planes.canonical_index
    a[i0], bx[i0], by[i0] = 1.0, 0.0, 0.0
    return PropCoeffs(a, bx, by, cal.cx, cal.cy)


def project_points(pts_cam, cal: Calibration):
    """Pinhole projection (no distortion) of camera-frame points."""
    pts = np.asarray(pts_cam, dtype=np.float64)
    z = pts[..., 2]
    return cal.fx * pts[..., 0] / z + cal.cx, cal.fy * pts[..., 1] / z + cal.cy, z


def backproject_to_plane(x, y, event_pose: Pose, ref_pose: Pose, cal: Calibration, depth: float):
    """Intersect event-pixel rays with ``Z_virtual = depth`` and project into the virtual camera.

    Direct 3-D construction, independent of the homography route.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rays_e = np.stack([(x - cal.cx) / cal.fx, (y - cal.cy) / cal.fy, np.ones_like(x)], axis=-1)
    # event camera -> virtual camera
    e_to_v = ref_pose.inverse().compose(event_pose)
    origin = e_to_v.translation
    dirs = rays_e @ e_to_v.rotation.T
    lam = (depth - origin[2]) / dirs[..., 2]
    pts = origin + lam[..., None] * dirs
    u, v, _ = project_points(pts, cal)
    return u, v
