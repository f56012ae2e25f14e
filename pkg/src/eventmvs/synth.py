"""Synthetic textured-plane scenes with exact ground truth.

Events come from pixel crossings rather than photometric simulation: every
edge point on a plane is projected (with lens distortion) at each trajectory
sample, and an event fires whenever its rounded pixel changes. Points hidden
behind a nearer plane do not fire.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detection import DepthMap
from .event_io import Calibration, Events, TrajectorySample, ValidationError
from .geometry import Pose, distort_pixels, quat_to_matrix


@dataclass
class TexturedPlane:
    """Rectangle ``origin + s*u + t*v`` for ``s, t`` in [0, 1]."""

    origin: tuple[float, float, float]
    u: tuple[float, float, float]
    v: tuple[float, float, float]
    density: float = 2000.0        # random interior edge points per m^2
    border_spacing: float = 0.0    # metres between border points; 0 disables

    @property
    def corners(self) -> np.ndarray:
        o, u, v = (np.asarray(a, dtype=np.float64) for a in (self.origin, self.u, self.v))
        return np.array([o, o + u, o + u + v, o + v])

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.u, self.v)
        return n / np.linalg.norm(n)

    @property
    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.u, self.v)))

    def edge_points(self, rng: np.random.Generator) -> np.ndarray:
        o, u, v = (np.asarray(a, dtype=np.float64) for a in (self.origin, self.u, self.v))
        n = int(round(self.density * self.area))
        st = rng.random((n, 2))
        pts = [o + st[:, :1] * u + st[:, 1:] * v]
        if self.border_spacing > 0:
            for a, d in ((o, u), (o, v), (o + u, v), (o + v, u)):
                k = max(int(np.linalg.norm(d) / self.border_spacing), 1)
                s = (np.arange(k) + 0.5) / k
                pts.append(a + s[:, None] * d)
        return np.concatenate(pts)

    def intersect(self, origins, dirs):
        """Ray parameter ``lam`` where ``origins + lam*dirs`` meets the rectangle (inf if not)."""
        o = np.asarray(self.origin, dtype=np.float64)
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        n = np.cross(u, v)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ((o - origins) @ n) / denom
            hit = origins + lam[..., None] * dirs
            rel = hit - o
            # solve rel = s*u + t*v in the plane via the dual basis
            uu, uv, vv = u @ u, u @ v, v @ v
            det = uu * vv - uv * uv
            ru, rv = rel @ u, rel @ v
            s = (vv * ru - uv * rv) / det
            t = (uu * rv - uv * ru) / det
        ok = np.isfinite(lam) & (np.abs(denom) > 1e-15) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
        return np.where(ok, lam, np.inf)


@dataclass
class TrajectorySpec:
    kind: str = "linear"                       # "linear" or "circular"
    start: tuple[float, float, float] = (-0.15, 0.0, 0.0)
    end: tuple[float, float, float] = (0.15, 0.0, 0.0)
    radius: float = 0.1                        # circular: in the camera x-y plane about ``start``
    duration: float = 1.0
    rate: float = 1000.0                       # samples per second
    yaw_deg: float = 0.0                       # total rotation about the camera y axis

    def samples(self) -> list[TrajectorySample]:
        n = int(round(self.duration * self.rate)) + 1
        out = []
        for j in range(n):
            s = j / (n - 1)
            t = self.duration * s
            if self.kind == "linear":
                p = (1 - s) * np.asarray(self.start) + s * np.asarray(self.end)
            elif self.kind == "circular":
                ang = 2 * math.pi * s
                p = np.asarray(self.start) + self.radius * np.array([math.cos(ang) - 1, math.sin(ang), 0.0])
            else:
                raise ValidationError(f"unknown trajectory kind {self.kind!r}")
            half = math.radians(self.yaw_deg) * (s - 0.5) / 2
            q = (0.0, math.sin(half), 0.0, math.cos(half))
            out.append(TrajectorySample(t, tuple(float(c) for c in p), q))
        return out


@dataclass
class SceneSpec:
    planes: list[TexturedPlane]
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    z_min: float = 0.8
    z_max: float = 2.5
    noise_rate: float = 0.0   # uniform spurious events per second
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        planes = [TexturedPlane(**{k: tuple(v) if isinstance(v, list) else v for k, v in p.items()})
                  for p in d.pop("planes")]
        traj = d.pop("trajectory", {})
        traj = TrajectorySpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in traj.items()})
        return cls(planes=planes, trajectory=traj, **d)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def davis_calibration(dist=(-0.08, 0.02, 0.0, 0.0, 0.0)) -> Calibration:
    return Calibration(240, 180, 200.0, 200.0, 120.0, 90.0, tuple(dist))


def three_planes(density: float = 2400.0, seed: int = 0) -> SceneSpec:
    """Three fronto-parallel textured planes at 1, 1.5 and 2 m, 0.3 m lateral sweep."""
    planes = [
        TexturedPlane((-0.55, -0.35, 1.0), (0.45, 0.0, 0.0), (0.0, 0.7, 0.0), density, 0.01),
        TexturedPlane((-0.2, -0.6, 1.5), (0.65, 0.0, 0.0), (0.0, 1.2, 0.0), density, 0.01),
        TexturedPlane((0.3, -0.8, 2.0), (0.8, 0.0, 0.0), (0.0, 1.6, 0.0), density, 0.01),
    ]
    return SceneSpec(planes, TrajectorySpec(), z_min=0.8, z_max=2.5, seed=seed)


def three_walls(density: float = 1800.0, seed: int = 1) -> SceneSpec:
    """A back wall, a receding side wall and a floor: slanted geometry."""
    planes = [
        TexturedPlane((-0.7, -0.9, 2.2), (1.9, 0.0, 0.0), (0.0, 1.3, 0.0), density, 0.01),
        TexturedPlane((-0.62, -0.5, 0.95), (0.0, 0.0, 1.2), (0.0, 0.9, 0.0), density, 0.01),
        TexturedPlane((-0.5, 0.4, 0.95), (1.5, 0.0, 0.0), (0.0, 0.0, 1.2), density, 0.01),
    ]
    return SceneSpec(planes, TrajectorySpec(), z_min=0.8, z_max=2.5, seed=seed)


BUILTIN_SCENES = {"3planes": three_planes, "3walls": three_walls}


def check_scene(scene: SceneSpec) -> None:
    """Every plane corner must lie within ``[z_min, z_max]`` in front of every pose."""
    corners = np.concatenate([p.corners for p in scene.planes])
    for s in scene.trajectory.samples():
        R = quat_to_matrix(s.orientation)
        z = (corners - np.asarray(s.position)) @ R[:, 2]
        if np.any(z < scene.z_min) or np.any(z > scene.z_max):
            raise ValidationError(
                f"scene leaves the depth range [{scene.z_min}, {scene.z_max}] at t={s.t:.4f}"
            )


def _occluded(centre: np.ndarray, pts: np.ndarray, owner: np.ndarray, planes) -> np.ndarray:
    dirs = pts - centre
    hidden = np.zeros(len(pts), dtype=bool)
    for k, plane in enumerate(planes):
        lam = plane.intersect(centre[None, :], dirs)
        hidden |= (owner != k) & (lam > 1e-9) & (lam < 1 - 1e-9)
    return hidden


class GroundTruth:
    """Exact depth (camera Z) of the nearest plane along each pixel ray."""

    def __init__(self, scene: SceneSpec, cal: Calibration):
        self.scene = scene
        self.cal = cal

    def depth_at(self, pose: Pose, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rays = np.stack([(x - self.cal.cx) / self.cal.fx, (y - self.cal.cy) / self.cal.fy, np.ones_like(x)], -1)
        dirs = rays @ pose.rotation.T
        origin = np.broadcast_to(pose.translation, dirs.shape)
        lam = np.full(x.shape, np.inf)
        for plane in self.scene.planes:
            lam = np.minimum(lam, plane.intersect(origin, dirs))
        # ray direction has unit camera-z, so lam is the camera depth
        return np.where(np.isfinite(lam) & (lam > 0), lam, np.nan)

    def __call__(self, pose: Pose) -> np.ndarray:
        ys, xs = np.mgrid[0 : self.cal.h, 0 : self.cal.w]
        return self.depth_at(pose, xs.astype(np.float64), ys.astype(np.float64))


def generate(scene: SceneSpec, cal: Calibration):
    """Return ``(events, trajectory, ground_truth)`` for ``scene``."""
    check_scene(scene)
    rng = np.random.default_rng(scene.seed)
    parts = [p.edge_points(rng) for p in scene.planes]
    pts = np.concatenate(parts) if parts else np.empty((0, 3))
    owner = np.concatenate([np.full(len(p), k) for k, p in enumerate(parts)]) if parts else np.empty(0, int)
    traj = scene.trajectory.samples()

    prev_px = np.full(len(pts), -1, dtype=np.int64)
    prev_py = np.full(len(pts), -1, dtype=np.int64)
    prev_vis = np.zeros(len(pts), dtype=bool)
    ts, xs, ys = [], [], []
    for j, s in enumerate(traj):
        R = quat_to_matrix(s.orientation)
        c = np.asarray(s.position, dtype=np.float64)
        cam = (pts - c) @ R
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u, v = distort_pixels(cal.fx * cam[:, 0] / z + cal.cx, cal.fy * cam[:, 1] / z + cal.cy, cal)
        px = np.floor(u + 0.5)
        py = np.floor(v + 0.5)
        vis = (z > 0) & (px >= 0) & (px < cal.w) & (py >= 0) & (py < cal.h)
        if len(scene.planes) > 1:
            vis &= ~_occluded(c, pts, owner, scene.planes)
        px = np.where(vis, px, -1).astype(np.int64)
        py = np.where(vis, py, -1).astype(np.int64)
        if j > 0:
            fire = vis & (~prev_vis | (px != prev_px) | (py != prev_py))
            idx = np.nonzero(fire)[0]  # point order within a sample
            ts.append(np.full(len(idx), s.t))
            xs.append(px[idx])
            ys.append(py[idx])
        prev_px, prev_py, prev_vis = px, py, vis

    t = np.concatenate(ts) if ts else np.empty(0)
    x = np.concatenate(xs) if xs else np.empty(0)
    y = np.concatenate(ys) if ys else np.empty(0)
    if scene.noise_rate > 0 and len(traj) > 1:
        t, x, y = _add_noise(t, x, y, scene, cal, traj, rng)
    p = np.where(np.arange(len(t)) % 2 == 0, 1, -1)
    return Events(t, x, y, p), traj, GroundTruth(scene, cal)


def _add_noise(t, x, y, scene, cal, traj, rng):
    n = rng.poisson(scene.noise_rate * (traj[-1].t - traj[0].t))
    # snap noise onto sample instants so ordering stays "per sample, then point order"
    sample_t = np.array([s.t for s in traj[1:]])
    nt = np.sort(rng.choice(sample_t, size=n))
    nx = rng.integers(0, cal.w, n)
    ny = rng.integers(0, cal.h, n)
    t_all = np.concatenate([t, nt])
    order = np.argsort(t_all, kind="stable")
    return t_all[order], np.concatenate([x, nx])[order], np.concatenate([y, ny])[order]


def abs_rel(est, gt) -> float:
    """Mean ``|d_est - d_gt| / d_gt`` over pixels where both depths exist."""
    d_est, d_gt = _pairs(est, gt)
    if d_est.size == 0:
        raise ValueError("AbsRel is undefined for an empty depth map")
    return float(np.mean(np.abs(d_est - d_gt) / d_gt))


def _pairs(est, gt):
    if isinstance(est, DepthMap):
        est_grid = est.depth
        gt_grid = gt(est.ref_pose) if callable(gt) else np.asarray(gt, dtype=np.float64)
    else:
        est_grid = np.asarray(est, dtype=np.float64)
        gt_grid = np.asarray(gt, dtype=np.float64)
    ok = np.isfinite(est_grid) & np.isfinite(gt_grid)
    return est_grid[ok], gt_grid[ok]


def pooled_abs_rel(depth_maps, gt: GroundTruth) -> float:
    """AbsRel pooled over every present pixel of every depth map."""
    pairs = [_pairs(dm, gt) for dm in depth_maps]
    d_est = np.concatenate([p[0] for p in pairs]) if pairs else np.empty(0)
    d_gt = np.concatenate([p[1] for p in pairs]) if pairs else np.empty(0)
    if d_est.size == 0:
        raise ValueError("AbsRel is undefined: no depth estimates")
    return float(np.mean(np.abs(d_est - d_gt) / d_gt))


def within_one_plane(depth_maps, gt: GroundTruth, planes) -> float:
    """Fraction of estimates whose inverse depth is within one plane step of the truth."""
    step = planes.inverse_spacing
    pairs = [_pairs(dm, gt) for dm in depth_maps]
    d_est = np.concatenate([p[0] for p in pairs])
    d_gt = np.concatenate([p[1] for p in pairs])
    return float(np.mean(np.abs(1 / d_est - 1 / d_gt) <= step * (1 + 1e-9)))
