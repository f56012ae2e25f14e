"""Disparity space image: a ``w x h x nz`` grid of ray-count scores.

Scores are stored flat, plane-major then row-major::

    addr = i * (w * h) + y * w + x

Float mode keeps ``float32`` scores; quantized mode keeps ``uint16`` scores
that saturate at 65535.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .geometry import DepthPlanes, Pose, make_depth_planes  # noqa: F401 (re-export)
from .quantized import Q_SCORE

SCORE_MAX = Q_SCORE.hi

KIND_FLOAT32 = 0
KIND_UINT16 = 1
_DUMP_HEADER = struct.Struct("<IIII")
DUMP_HEADER_SIZE = _DUMP_HEADER.size


class Dsi:
    def __init__(self, w: int, h: int, planes: DepthPlanes, ref_pose: Pose | None = None,
                 quantized: bool = False):
        self.w = int(w)
        self.h = int(h)
        self.planes = planes
        self.nz = len(planes)
        self.quantized = quantized
        self.ref_pose = ref_pose if ref_pose is not None else Pose.identity()
        dtype = np.uint16 if quantized else np.float32
        self.scores = np.zeros(self.w * self.h * self.nz, dtype=dtype)

    @property
    def size(self) -> int:
        return self.w * self.h * self.nz

    @property
    def plane_size(self) -> int:
        return self.w * self.h

    def volume(self) -> np.ndarray:
        """View of the scores shaped ``(nz, h, w)``."""
        return self.scores.reshape(self.nz, self.h, self.w)

    def reset(self, new_ref: Pose | None = None) -> None:
        self.scores[:] = 0
        if new_ref is not None:
            self.ref_pose = new_ref

    def copy(self) -> "Dsi":
        other = Dsi(self.w, self.h, self.planes, self.ref_pose, self.quantized)
        other.scores[:] = self.scores
        return other

    # -- voting -------------------------------------------------------------

    def execute_votes(self, addrs, vote_value=1, workers: int = 1) -> None:
        """Add ``vote_value`` at every address; quantized scores saturate."""
        addrs = np.asarray(addrs, dtype=np.int64)
        if addrs.size == 0:
            return
        if workers <= 1 or self.nz < 2:
            self._accumulate(addrs, None, 0, self.size, vote_value)
            return
        self._parallel(addrs, None, vote_value, workers)

    def add_weighted(self, addrs, weights, workers: int = 1) -> None:
        """Fractional votes (bilinear mode). Float datapath only."""
        if self.quantized:
            raise TypeError("fractional votes are not supported by the quantized DSI")
        addrs = np.asarray(addrs, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if addrs.size == 0:
            return
        if workers <= 1 or self.nz < 2:
            self._accumulate(addrs, weights, 0, self.size, 1)
            return
        self._parallel(addrs, weights, 1, workers)

    def _parallel(self, addrs, weights, vote_value, workers):
        # Disjoint plane ranges touch disjoint memory; per-voxel order is preserved.
        bounds = np.linspace(0, self.nz, min(workers, self.nz) + 1).astype(int) * self.plane_size
        jobs = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sel = (addrs >= lo) & (addrs < hi)
            jobs.append((addrs[sel], None if weights is None else weights[sel], lo, hi))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda j: self._accumulate(j[0], j[1], j[2], j[3], vote_value), jobs))

    def _accumulate(self, addrs, weights, lo, hi, vote_value):
        if addrs.size == 0:
            return
        if self.quantized:
            # saturating: min(65535, old + count), touched voxels only
            touched, counts = np.unique(addrs, return_counts=True)
            total = self.scores[touched].astype(np.int64) + counts.astype(np.int64) * int(vote_value)
            self.scores[touched] = np.minimum(total, SCORE_MAX)
        elif weights is None:
            np.add.at(self.scores, addrs, np.float32(vote_value))
        else:
            # sequential in input order, so the result is independent of chunking
            np.add.at(self.scores, addrs, weights.astype(np.float32) * np.float32(vote_value))

    def vote_bilinear(self, x: float, y: float, i: int) -> bool:
        """Split one unit vote over the four pixel neighbours of ``(x, y)`` on plane ``i``.

        Returns False (a projection miss) when no neighbour is in bounds.
        """
        addrs, weights = bilinear_votes(np.array([x]), np.array([y]), np.array([i]), self.w, self.h)
        if addrs.size == 0:
            return False
        self.add_weighted(addrs, weights)
        return True

    # -- serialization ------------------------------------------------------

    def nbytes(self) -> int:
        return self.scores.nbytes

    def dump(self, fh) -> int:
        kind = KIND_UINT16 if self.quantized else KIND_FLOAT32
        fh.write(_DUMP_HEADER.pack(self.w, self.h, self.nz, kind))
        payload = self.scores.astype("<u2" if self.quantized else "<f4").tobytes()
        fh.write(payload)
        return _DUMP_HEADER.size + len(payload)


def load_dsi_dump(fh) -> tuple[np.ndarray, int]:
    """Return ``(scores (nz, h, w), kind)`` from a dump written by :meth:`Dsi.dump`."""
    w, h, nz, kind = _DUMP_HEADER.unpack(fh.read(_DUMP_HEADER.size))
    dtype = "<u2" if kind == KIND_UINT16 else "<f4"
    data = np.frombuffer(fh.read(w * h * nz * np.dtype(dtype).itemsize), dtype=dtype)
    return data.reshape(nz, h, w), kind


def vote_address(x: int, y: int, i: int, w: int, h: int, nz: int) -> int:
    if not (0 <= x < w and 0 <= y < h and 0 <= i < nz):
        raise IndexError(f"voxel ({x}, {y}, {i}) outside {w}x{h}x{nz}")
    return i * w * h + y * w + x


def round_half_away(v):
    """Round to the nearest integer, ties away from zero."""
    v = np.asarray(v, dtype=np.float64)
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def nearest_votes(xi, yi, w: int, h: int):
    """Addresses for ``(nz, n)`` plane coordinates; returns ``(addrs, misses)``.

    Output order is plane-major, then event order.
    """
    xr = round_half_away(xi)
    yr = round_half_away(yi)
    hit = (xr >= 0) & (xr < w) & (yr >= 0) & (yr < h)
    nz = xi.shape[0]
    plane = np.broadcast_to(np.arange(nz, dtype=np.int64)[:, None], xi.shape)
    addrs = plane[hit] * (w * h) + yr[hit].astype(np.int64) * w + xr[hit].astype(np.int64)
    return addrs, int(hit.size - np.count_nonzero(hit))


def bilinear_votes(xi, yi, planes, w: int, h: int):
    """Bilinear split of unit votes at real coordinates.

    ``xi, yi, planes`` broadcast together. Returns ``(addrs, weights)`` for the
    in-bounds corners; a point with no in-bounds corner contributes nothing.
    """
    xi, yi, planes = np.broadcast_arrays(
        np.asarray(xi, dtype=np.float64), np.asarray(yi, dtype=np.float64), np.asarray(planes)
    )
    x0 = np.floor(xi)
    y0 = np.floor(yi)
    dx = xi - x0
    dy = yi - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    planes = planes.astype(np.int64)
    addrs, weights = [], []
    for ox, oy, wgt in (
        (0, 0, (1 - dx) * (1 - dy)),
        (1, 0, dx * (1 - dy)),
        (0, 1, (1 - dx) * dy),
        (1, 1, dx * dy),
    ):
        cx = x0 + ox
        cy = y0 + oy
        ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h) & (wgt > 0)
        addrs.append((planes * (w * h) + cy * w + cx)[ok])
        weights.append(wgt[ok])
    return np.concatenate(addrs), np.concatenate(weights)


def bilinear_misses(xi, yi, w: int, h: int) -> int:
    """Points whose four neighbours are all out of bounds."""
    inside = (xi > -1) & (xi < w) & (yi > -1) & (yi < h)
    return int(np.size(inside) - np.count_nonzero(inside))
