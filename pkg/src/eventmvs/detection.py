"""Scene structure detection on a DSI and merging into a global point cloud."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsi import Dsi
from .event_io import Calibration
from .geometry import Pose


@dataclass(frozen=True)
class DetectParams:
    filter_radius: int = 5
    threshold_offset: float = 4.0
    median_window: int = 3
    depth_smoothing: bool = True


@dataclass(eq=False)
class DepthMap:
    depth: np.ndarray        # (h, w) meters, NaN where empty
    confidence: np.ndarray   # (h, w) smoothed max score
    ref_pose: Pose
    plane_index: np.ndarray  # (h, w) int, -1 where empty

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.depth)

    def __len__(self) -> int:
        return int(np.count_nonzero(self.mask))


def smooth_depth(vol: np.ndarray) -> np.ndarray:
    """Apply ``[1/4, 1/2, 1/4]`` along the depth axis; zero outside the volume."""
    out = 0.5 * vol
    out[1:] += 0.25 * vol[:-1]
    out[:-1] += 0.25 * vol[1:]
    return out


def box_sum(img: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Sum and pixel count over the in-image part of a ``(2r+1)^2`` window.

    Uses an integral image, so sums of integer or quarter-integer scores are exact.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    size = 2 * radius + 1

    def windowed(a):
        c = np.zeros((h + size, w + size))
        c[1:, 1:] = np.pad(a, radius).cumsum(0).cumsum(1)
        return c[size:, size:] - c[:-size, size:] - c[size:, :-size] + c[:-size, :-size]

    return windowed(img), windowed(np.ones((h, w)))


def local_mean(img: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the in-image part of a ``(2r+1)^2`` window."""
    s, n = box_sum(img, radius)
    return s / n


def lower_median_filter(index: np.ndarray, present: np.ndarray, window: int) -> np.ndarray:
    """Median of present neighbours' plane indices; even counts take the lower middle."""
    if window == 1:
        return np.where(present, index, -1)
    r = window // 2
    h, w = index.shape
    big = np.iinfo(np.int64).max
    padded = np.full((h + 2 * r, w + 2 * r), big, dtype=np.int64)
    padded[r : r + h, r : r + w] = np.where(present, index, big)
    stack = np.stack(
        [padded[dy : dy + h, dx : dx + w] for dy in range(window) for dx in range(window)]
    )
    stack.sort(axis=0)
    count = np.count_nonzero(stack != big, axis=0)
    pick = np.maximum(count - 1, 0) // 2
    med = np.take_along_axis(stack, pick[None], axis=0)[0]
    return np.where(present, med, -1)


def detect(dsi: Dsi, params: DetectParams = DetectParams()) -> DepthMap:
    vol = dsi.volume().astype(np.float64)
    if params.depth_smoothing:
        vol = smooth_depth(vol)
    # argmax keeps the first maximum: ties go to the nearer plane
    best = np.argmax(vol, axis=0)
    conf = np.take_along_axis(vol, best[None], axis=0)[0]
    # conf > mean + offset, multiplied through by the window count to stay exact
    s, n = box_sum(conf, params.filter_radius)
    selected = (n * conf > s + n * params.threshold_offset) & (conf > 0)
    index = lower_median_filter(best, selected, params.median_window)
    depth = np.full(conf.shape, np.nan)
    depth[selected] = dsi.planes.depths[index[selected]]
    return DepthMap(depth, conf, dsi.ref_pose, index)


def depth_map_to_points(dm: DepthMap, cal: Calibration) -> np.ndarray:
    ys, xs = np.nonzero(dm.mask)
    z = dm.depth[ys, xs]
    cam = np.stack([(xs - cal.cx) / cal.fx * z, (ys - cal.cy) / cal.fy * z, z], axis=1)
    return dm.ref_pose.transform(cam)


def voxel_downsample(points: np.ndarray, leaf: float) -> np.ndarray:
    """Replace the points of each occupied ``leaf``-sized voxel by their centroid."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if leaf <= 0 or len(pts) == 0:
        return pts
    keys = np.floor(pts / leaf).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    out = np.empty((len(counts), 3))
    for k in range(3):
        out[:, k] = np.bincount(inverse, weights=pts[:, k]) / counts
    return out


@dataclass
class GlobalMap:
    leaf: float = 0.0
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))

    def __len__(self) -> int:
        return len(self.points)

    def merge(self, pts) -> None:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            return
        if not np.all(np.isfinite(pts)):
            raise ValueError("refusing to merge non-finite points")
        self.points = np.concatenate([self.points, pts])
        if self.leaf > 0:
            self.points = voxel_downsample(self.points, self.leaf)
