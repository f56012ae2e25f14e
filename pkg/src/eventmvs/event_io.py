"""Readers and writers for event streams, trajectories, calibration and outputs.

On-disk formats:

* events: one ``t x y p`` record per line, ``p`` in {0, 1}
* trajectory: one ``t px py pz qx qy qz qw`` record per line
* calibration: flat ``key = value`` text (w, h, fx, fy, cx, cy, k1, k2, p1, p2, k3)
* point clouds: ASCII PLY
* depth maps: CSV (blank cells for missing depth) plus a 16-bit binary PGM
  confidence image
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np


class ParseError(ValueError):
    """Malformed input line. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    x: float
    y: float
    t: float
    p: int


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # (qx, qy, qz, qw), world <- camera


@dataclass(frozen=True)
class Calibration:
    w: int
    h: int
    fx: float
    fy: float
    cx: float
    cy: float
    dist: tuple[float, float, float, float, float] = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValidationError("sensor resolution must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 < self.cx < self.w and 0 < self.cy < self.h):
            raise ValidationError("principal point must lie inside the sensor")
        if len(self.dist) != 5:
            raise ValidationError("expected 5 distortion coefficients (k1, k2, p1, p2, k3)")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def without_distortion(self) -> "Calibration":
        return Calibration(self.w, self.h, self.fx, self.fy, self.cx, self.cy)


@dataclass
class Events:
    """Column store of events; indexing with an int yields an :class:`Event`."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValidationError("event columns have different lengths")

    @classmethod
    def empty(cls) -> "Events":
        return cls(np.empty(0), np.empty(0), np.empty(0), np.empty(0, dtype=np.int8))

    @classmethod
    def from_events(cls, events: Iterable[Event]) -> "Events":
        evs = list(events)
        return cls(
            [e.t for e in evs], [e.x for e in evs], [e.y for e in evs], [e.p for e in evs]
        )

    @classmethod
    def concatenate(cls, parts: list["Events"]) -> "Events":
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([e.t for e in parts]),
            np.concatenate([e.x for e in parts]),
            np.concatenate([e.y for e in parts]),
            np.concatenate([e.p for e in parts]),
        )

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return Event(float(self.x[idx]), float(self.y[idx]), float(self.t[idx]), int(self.p[idx]))
        return Events(self.t[idx], self.x[idx], self.y[idx], self.p[idx])

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def with_xy(self, x: np.ndarray, y: np.ndarray) -> "Events":
        return Events(self.t, x, y, self.p)


# ---------------------------------------------------------------------------
# Parsers


def _open_text(src) -> tuple[TextIO, bool]:
    if isinstance(src, (str, os.PathLike)):
        return open(src, "r", encoding="ascii"), True
    return src, False


def parse_events(src, cal: Calibration | None = None) -> Events:
    """Parse a ``t x y p`` text stream.

    ``src`` is a path or an open text stream. With ``cal`` given, coordinates
    are bounds-checked against the sensor resolution.
    """
    fh, owned = _open_text(src)
    ts, xs, ys, ps = [], [], [], []
    try:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 4:
                raise ParseError(f"expected 4 fields 't x y p', got {len(fields)}", lineno)
            try:
                t = float(fields[0])
                x = int(fields[1])
                y = int(fields[2])
                p = int(fields[3])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not math.isfinite(t) or t < 0:
                raise ValidationError(f"line {lineno}: timestamp must be finite and non-negative")
            if p not in (0, 1):
                raise ParseError(f"polarity must be 0 or 1, got {p}", lineno)
            if cal is not None and not (0 <= x < cal.w and 0 <= y < cal.h):
                raise ValidationError(
                    f"line {lineno}: pixel ({x}, {y}) outside {cal.w}x{cal.h} sensor"
                )
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(1 if p else -1)
    finally:
        if owned:
            fh.close()
    return Events(ts, xs, ys, np.array(ps, dtype=np.int8))


def format_events(events: Events) -> str:
    lines = []
    for t, x, y, p in zip(events.t, events.x, events.y, events.p):
        lines.append(f"{float(t)!r} {int(x)} {int(y)} {1 if p > 0 else 0}\n")
    return "".join(lines)


def write_events(events: Events, path) -> None:
    Path(path).write_text(format_events(events), encoding="ascii")


QUAT_TOL = 1e-3


def parse_trajectory(src) -> list[TrajectorySample]:
    fh, owned = _open_text(src)
    samples: list[TrajectorySample] = []
    try:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            if len(fields) != 8:
                raise ParseError(f"expected 8 fields 't px py pz qx qy qz qw', got {len(fields)}", lineno)
            try:
                vals = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ValidationError(f"line {lineno}: non-finite value")
            t = vals[0]
            q = np.array(vals[4:8])
            norm = float(np.linalg.norm(q))
            if abs(norm - 1.0) > QUAT_TOL:
                raise ValidationError(f"line {lineno}: quaternion norm {norm:.6f} is not unit")
            if samples and t <= samples[-1].t:
                raise ValidationError(f"line {lineno}: timestamps must be strictly increasing")
            q = q / norm
            samples.append(TrajectorySample(t, tuple(vals[1:4]), tuple(float(c) for c in q)))
    finally:
        if owned:
            fh.close()
    return samples


def write_trajectory(samples: Iterable[TrajectorySample], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for s in samples:
            vals = (s.t, *s.position, *s.orientation)
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")


def parse_key_values(src) -> dict[str, str]:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    fh, owned = _open_text(src)
    out: dict[str, str] = {}
    try:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, value = line.split("=", 1)
            else:
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ParseError(f"expected 'key = value', got {line!r}", lineno)
                key, value = parts
            out[key.strip()] = value.strip()
    finally:
        if owned:
            fh.close()
    return out


_CAL_KEYS = ("w", "h", "fx", "fy", "cx", "cy")
_DIST_KEYS = ("k1", "k2", "p1", "p2", "k3")


def parse_calibration(src) -> Calibration:
    kv = parse_key_values(src)
    missing = [k for k in _CAL_KEYS if k not in kv]
    if missing:
        raise ParseError(f"calibration is missing keys: {', '.join(missing)}")
    try:
        dist = tuple(float(kv.get(k, 0.0)) for k in _DIST_KEYS)
        return Calibration(
            int(kv["w"]), int(kv["h"]),
            float(kv["fx"]), float(kv["fy"]), float(kv["cx"]), float(kv["cy"]),
            dist,
        )
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ParseError(str(exc)) from None


def write_calibration(cal: Calibration, path) -> None:
    vals = dict(zip(_CAL_KEYS, (cal.w, cal.h, cal.fx, cal.fy, cal.cx, cal.cy)))
    vals.update(zip(_DIST_KEYS, cal.dist))
    Path(path).write_text("".join(f"{k} = {v!r}\n" for k, v in vals.items()), encoding="ascii")


# ---------------------------------------------------------------------------
# Writers


def _fmt_num(v: float) -> str:
    # Shortest round-trip repr, with integral values printed without ".0".
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def write_point_cloud(points, path) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValidationError("point cloud contains non-finite coordinates")
    header = (
        "ply\n"
        "format ascii 1.0\n"
        f"element vertex {len(pts)}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "end_header\n"
    )
    body = "".join(" ".join(_fmt_num(c) for c in p) + "\n" for p in pts)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header)
        fh.write(body)


def read_point_cloud(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        n = None
        for line in fh:
            line = line.strip()
            if line.startswith("element vertex"):
                n = int(line.split()[2])
            if line == "end_header":
                break
        if n is None:
            raise ParseError("PLY header has no vertex element")
        rows = [list(map(float, fh.readline().split())) for _ in range(n)]
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def write_pgm16(image: np.ndarray, path) -> None:
    """Binary P5 PGM with maxval 65535 (big-endian samples)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValidationError("PGM image must be 2-D")
    data = np.clip(np.rint(img), 0, 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    pos += 1  # single whitespace after maxval
    if tokens[0] != "P5":
        raise ParseError("not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw[pos:], dtype=dtype, count=w * h).reshape(h, w).astype(np.int64)


def write_depth_map(depth: np.ndarray, confidence: np.ndarray, prefix) -> tuple[Path, Path]:
    """Write ``<prefix>.csv`` (meters, blank where missing) and ``<prefix>_confidence.pgm``.

    Grids are indexed ``[row, col]`` i.e. shape ``(h, w)``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    confidence = np.asarray(confidence)
    if depth.shape != confidence.shape or depth.ndim != 2:
        raise ValidationError(
            f"depth {depth.shape} and confidence {confidence.shape} grids must match"
        )
    prefix = Path(prefix)
    csv_path = prefix.with_name(prefix.name + ".csv")
    pgm_path = prefix.with_name(prefix.name + "_confidence.pgm")
    with open(csv_path, "w", encoding="ascii") as fh:
        for row in depth:
            fh.write(",".join("" if not np.isfinite(v) else _fmt_num(v) for v in row) + "\n")
    write_pgm16(confidence, pgm_path)
    return csv_path, pgm_path


def read_depth_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            rows.append([float(c) if c else np.nan for c in line.rstrip("\n").split(",")])
    return np.array(rows, dtype=np.float64)
