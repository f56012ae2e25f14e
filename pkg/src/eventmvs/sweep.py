"""Space-sweep pipeline: aggregation, key frames, back-projection and voting.

Two orderings of the same computation are provided:

* ``reformulated``: distortion correction per event as the stream arrives,
  one homography to the canonical plane plus per-plane affine coefficients,
  nearest (or bilinear) voting. Float or fixed-point datapath.
* ``reference``: per-frame distortion correction and one homography per depth
  plane, as a plainly structured baseline.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import quantized as q
from .config import RunConfig
from .detection import DepthMap, DetectParams, GlobalMap, depth_map_to_points, detect
from .dsi import DUMP_HEADER_SIZE, Dsi, bilinear_misses, bilinear_votes, nearest_votes
from .event_io import Calibration, Events, TrajectorySample
from .geometry import (
    DegenerateGeometryError,
    Homography,
    OutOfRangeError,
    Pose,
    PropCoeffs,
    compute_homography,
    compute_prop_coeffs,
    interpolate_pose,
    make_depth_planes,
    undistort_pixels,
)

log = logging.getLogger(__name__)

W_EPS = 1e-9


@dataclass(eq=False)
class EventFrame:
    events: Events
    pose: Pose
    t_mid: float
    index: int = 0
    is_keyframe: bool = False


@dataclass(eq=False)
class CanonicalPoints:
    x: np.ndarray
    y: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.x)


def aggregate(events: Events, n: int, traj: Sequence[TrajectorySample]) -> Iterator[EventFrame]:
    """Consecutive groups of ``n`` events; a trailing partial group is dropped.

    Each frame gets the pose at the timestamp of its event ``n // 2``.
    """
    if n < 1:
        raise ValueError("events_per_frame must be >= 1")
    for k in range(len(events) // n):
        chunk = events[k * n : (k + 1) * n]
        t_mid = float(chunk.t[n // 2])
        try:
            pose = interpolate_pose(traj, t_mid)
        except OutOfRangeError:
            log.warning("frame %d: t=%.6f outside trajectory, dropped", k, t_mid)
            continue
        yield EventFrame(chunk, pose, t_mid, index=k)


def select_keyframe(frame_pose: Pose, key_pose: Pose, mean_depth: float, frac: float) -> bool:
    dist = float(np.linalg.norm(frame_pose.position - key_pose.position))
    return dist > frac * mean_depth


def canonical_backproject(frame_or_xy, H: Homography) -> CanonicalPoints:
    if isinstance(frame_or_xy, EventFrame):
        x, y = frame_or_xy.events.x, frame_or_xy.events.y
    else:
        x, y = frame_or_xy
    u, v, w = H.apply(x, y)
    valid = np.abs(w) >= W_EPS
    safe = np.where(valid, w, 1.0)
    return CanonicalPoints(np.where(valid, u / safe, 0.0), np.where(valid, v / safe, 0.0), valid)


def generate_votes(pts: CanonicalPoints, phi: PropCoeffs, w: int, h: int):
    """Nearest-voxel addresses (plane-major, then event order) and miss count."""
    xi, yi = phi.apply(pts.x[pts.valid], pts.y[pts.valid])
    return nearest_votes(xi, yi, w, h)


def plane_coordinates_reference(x, y, pose: Pose, ref_pose: Pose, cal: Calibration, depths):
    """Per-plane homographies applied directly to event pixels; ``(nz, n)`` arrays."""
    xs, ys, ok = [], [], []
    for z in depths:
        u, v, w = compute_homography(pose, ref_pose, cal, float(z)).apply(x, y)
        valid = np.abs(w) >= W_EPS
        safe = np.where(valid, w, 1.0)
        xs.append(u / safe)
        ys.append(v / safe)
        ok.append(valid)
    return np.array(xs), np.array(ys), np.array(ok)


@dataclass
class FrameStats:
    frame: int
    t_mid: float
    keyframe: bool
    events: int
    valid: int
    votes: int
    misses: int


@dataclass
class RunSummary:
    frames: int = 0
    keyframes: int = 0
    events: int = 0
    votes: int = 0
    misses: int = 0
    skipped_frames: int = 0
    depth_maps: int = 0
    points: int = 0
    wall_time_s: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


class Reconstructor:
    """Holds the local DSI, key reference view and global map across frames."""

    def __init__(self, cal: Calibration, cfg: RunConfig):
        self.cal = cal
        self.intrinsics = cal.without_distortion()
        self.cfg = cfg
        self.planes = make_depth_planes(cfg.z_min, cfg.z_max, cfg.n_depth_planes)
        self.quantized = cfg.datapath == "quantized"
        self.dsi = Dsi(cal.w, cal.h, self.planes, quantized=self.quantized)
        self.ref_pose: Pose | None = None
        z0, z1 = cfg.z_min, cfg.z_max
        self.mean_depth = 2 * z0 * z1 / (z0 + z1)
        self.detect_params = DetectParams(
            cfg.filter_radius, cfg.threshold_offset, cfg.median_window, cfg.depth_smoothing
        )
        self.depth_maps: list[DepthMap] = []
        self.global_map = GlobalMap(cfg.voxel_leaf)
        self.frame_stats: list[FrameStats] = []
        self.summary = RunSummary()
        self.on_depth_map = None  # optional callback(DepthMap)

    # -- per frame ----------------------------------------------------------

    def process_frame(self, frame: EventFrame) -> None:
        first = self.ref_pose is None
        if first or select_keyframe(frame.pose, self.ref_pose, self.mean_depth, self.cfg.keyframe_dist_frac):
            frame.is_keyframe = True
            if not first:
                self._close_segment()
            self.ref_pose = frame.pose
            self.dsi.reset(frame.pose)
            self.summary.keyframes += 1
        try:
            votes, misses, valid = self._vote(frame)
        except DegenerateGeometryError as exc:
            log.warning("frame %d skipped: %s", frame.index, exc)
            self.summary.skipped_frames += 1
            return
        n = len(frame.events)
        self.frame_stats.append(
            FrameStats(frame.index, frame.t_mid, frame.is_keyframe, n, valid, votes, misses)
        )
        self.summary.frames += 1
        self.summary.events += n
        self.summary.votes += votes
        self.summary.misses += misses

    def _vote(self, frame: EventFrame):
        cfg = self.cfg
        cal = self.intrinsics
        w, h = cal.w, cal.h
        ev = frame.events
        if cfg.pipeline == "reference":
            x, y = undistort_pixels(ev.x, ev.y, self.cal)
            xi, yi, ok = plane_coordinates_reference(x, y, frame.pose, self.ref_pose, cal, self.planes.depths)
            keep = ok.all(axis=0)
            xi, yi = xi[:, keep], yi[:, keep]
            valid = int(np.count_nonzero(keep))
            return self._cast(xi, yi) + (valid,)

        H = compute_homography(frame.pose, self.ref_pose, cal, self.planes.z0)
        phi = compute_prop_coeffs(frame.pose, self.ref_pose, cal, self.planes)
        if self.quantized:
            xq = q.quantize_array(ev.x, q.Q_COORD)
            yq = q.quantize_array(ev.y, q.Q_COORD)
            x0, y0, ok = q.q_canonical_backproject(xq, yq, q.QHomography.from_float(H))
            addrs, misses = q.q_generate_votes(x0, y0, ok, q.QPropCoeffs.from_float(phi), w, h)
            self.dsi.execute_votes(addrs, cfg.vote_value, cfg.workers)
            return int(addrs.size), misses, int(np.count_nonzero(ok))
        pts = canonical_backproject((ev.x, ev.y), H)
        xi, yi = phi.apply(pts.x[pts.valid], pts.y[pts.valid])
        return self._cast(xi, yi) + (int(np.count_nonzero(pts.valid)),)

    def _cast(self, xi, yi):
        w, h = self.cal.w, self.cal.h
        if self.cfg.vote_mode == "nearest":
            addrs, misses = nearest_votes(xi, yi, w, h)
            self.dsi.execute_votes(addrs, self.cfg.vote_value, self.cfg.workers)
            return int(addrs.size), misses
        planes = np.arange(xi.shape[0])[:, None]
        addrs, weights = bilinear_votes(xi, yi, planes, w, h)
        if self.cfg.vote_value != 1:
            weights = weights * self.cfg.vote_value
        self.dsi.add_weighted(addrs, weights, self.cfg.workers)
        misses = bilinear_misses(xi, yi, w, h)
        return int(xi.size - misses), misses

    # -- key frame boundaries ----------------------------------------------

    def _close_segment(self) -> None:
        dm = detect(self.dsi, self.detect_params)
        if len(dm) == 0:
            return
        self.depth_maps.append(dm)
        self.global_map.merge(depth_map_to_points(dm, self.intrinsics))
        self.mean_depth = float(np.median(dm.depth[dm.mask]))
        self.summary.depth_maps += 1
        if self.on_depth_map is not None:
            self.on_depth_map(dm)

    def finish(self) -> None:
        if self.ref_pose is not None:
            self._close_segment()
        self.summary.points = len(self.global_map)


def undistort_stream(events: Events, cal: Calibration, chunk: int = 65536) -> Events:
    """Per-event distortion correction applied as the stream is read."""
    if not any(cal.dist):
        return events
    xs, ys = [], []
    for lo in range(0, len(events), chunk):
        x, y = undistort_pixels(events.x[lo : lo + chunk], events.y[lo : lo + chunk], cal)
        xs.append(x)
        ys.append(y)
    if not xs:
        return events
    return events.with_xy(np.concatenate(xs), np.concatenate(ys))


@dataclass
class RunResult:
    depth_maps: list[DepthMap]
    global_map: GlobalMap
    frame_stats: list[FrameStats]
    summary: RunSummary
    dsi: Dsi
    planes: object = field(repr=False, default=None)


def run_pipeline(events: Events, traj: Sequence[TrajectorySample], cal: Calibration,
                 cfg: RunConfig, on_depth_map=None) -> RunResult:
    """Reconstruct from raw sensor events with known trajectory."""
    start = time.perf_counter()
    rec = Reconstructor(cal, cfg)
    rec.on_depth_map = on_depth_map
    stream = undistort_stream(events, cal) if cfg.pipeline == "reformulated" else events
    for frame in aggregate(stream, cfg.events_per_frame, traj):
        rec.process_frame(frame)
    rec.finish()
    rec.summary.wall_time_s = time.perf_counter() - start
    return RunResult(rec.depth_maps, rec.global_map, rec.frame_stats, rec.summary, rec.dsi, rec.planes)


_F32_HEADER = struct.Struct("<4sI")


@dataclass
class BufferSizes:
    header: int = 0
    payload: int = 0

    @property
    def total(self) -> int:
        return self.header + self.payload


def serialize_buffers(dsi: Dsi, events: Events, fh) -> BufferSizes:
    """Write the DSI and the interleaved event-coordinate buffer to ``fh``.

    The quantized datapath stores coordinates as ``Q_COORD`` raws and scores
    as ``uint16``; the float datapath as ``float32`` for both.
    """
    sizes = BufferSizes()
    dsi_bytes = dsi.dump(fh)
    sizes.header += DUMP_HEADER_SIZE
    sizes.payload += dsi_bytes - DUMP_HEADER_SIZE
    xy = np.empty(2 * len(events), dtype=np.float64)
    xy[0::2] = events.x
    xy[1::2] = events.y
    if dsi.quantized:
        n = q.dump_qbuffer(q.quantize_array(xy, q.Q_COORD), q.Q_COORD, fh)
        head = q.QRAW_HEADER_SIZE
    else:
        payload = xy.astype("<f4").tobytes()
        fh.write(_F32_HEADER.pack(b"F32 ", xy.size))
        fh.write(payload)
        head = _F32_HEADER.size
        n = head + len(payload)
    sizes.header += head
    sizes.payload += n - head
    return sizes
