"""Bit-accurate fixed-point mirror of canonical back-projection and vote generation.

Formats (two's complement unless noted):

=====================  =======  ===========  ===============
buffer                 bits     fractional   name
=====================  =======  ===========  ===============
event / Z0 coordinates 16       7            ``Q_COORD``
homography, phi        32       21           ``Q_PARAM``
Z_i coordinates        8 (u)    0            ``Q_ZI``
DSI scores             16 (u)   0            ``Q_SCORE``
=====================  =======  ===========  ===============

All rounding is round-half-away-from-zero and all narrowing saturates.
Raw values are plain Python ints (scalar API) or ``int64`` arrays (vector
API); products that could exceed 63 bits fall back to object arrays so the
result stays exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import Homography, PropCoeffs


@dataclass(frozen=True)
class QFormat:
    total_bits: int
    frac_bits: int
    signed: bool = True

    @property
    def lo(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def hi(self) -> int:
        return (1 << (self.total_bits - 1)) - 1 if self.signed else (1 << self.total_bits) - 1

    @property
    def label(self) -> str:
        return f"{'' if self.signed else 'U'}Q{self.total_bits - self.frac_bits}.{self.frac_bits}"

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def numpy_dtype(self):
        width = {8: "1", 16: "2", 32: "4", 64: "8"}[self.total_bits]
        return np.dtype(("<i" if self.signed else "<u") + width)


Q_COORD = QFormat(16, 7)
Q_PARAM = QFormat(32, 21)
Q_ZI = QFormat(8, 0, signed=False)
Q_SCORE = QFormat(16, 0, signed=False)


# ---------------------------------------------------------------------------
# Scalar arithmetic


def round_shift(value: int, shift: int) -> int:
    """``value / 2**shift`` rounded half away from zero (left shift if negative)."""
    if shift <= 0:
        return value << -shift
    half = 1 << (shift - 1)
    if value >= 0:
        return (value + half) >> shift
    return -((-value + half) >> shift)


def saturate(raw: int, fmt: QFormat) -> int:
    return min(max(raw, fmt.lo), fmt.hi)


@dataclass(frozen=True)
class FixedPoint:
    raw: int
    fmt: QFormat

    def __post_init__(self):
        if not (self.fmt.lo <= self.raw <= self.fmt.hi):
            raise ValueError(f"raw {self.raw} outside {self.fmt.label} range")

    @property
    def value(self) -> float:
        return self.raw / (1 << self.fmt.frac_bits)

    def __float__(self) -> float:
        return self.value


def quantize(x: float, fmt: QFormat) -> FixedPoint:
    """Nearest representable value (ties away from zero), saturated."""
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError("cannot quantize a non-finite value")
    num, den = float(x).as_integer_ratio()
    num <<= fmt.frac_bits
    # den is a power of two
    raw = round_shift(num, den.bit_length() - 1)
    return FixedPoint(saturate(raw, fmt), fmt)


def fx_mul(a: FixedPoint, b: FixedPoint, out_fmt: QFormat) -> FixedPoint:
    prod = a.raw * b.raw
    raw = round_shift(prod, a.fmt.frac_bits + b.fmt.frac_bits - out_fmt.frac_bits)
    return FixedPoint(saturate(raw, out_fmt), out_fmt)


def restoring_divide(numerator: int, divisor: int, bits: int) -> int:
    """Unsigned restoring division producing ``bits`` quotient bits (floor of n/d)."""
    if divisor <= 0 or numerator < 0:
        raise ValueError("restoring_divide takes a non-negative numerator and positive divisor")
    rem = 0
    quo = 0
    for i in range(bits - 1, -1, -1):
        rem = (rem << 1) | ((numerator >> i) & 1)
        if rem >= divisor:
            rem -= divisor
            quo |= 1 << i
    return quo


def reciprocal(w_raw: int, w_frac: int, out_fmt: QFormat = Q_PARAM) -> int:
    """Raw ``1/w`` in ``out_fmt``, truncated toward zero, then saturated."""
    if w_raw == 0:
        raise ZeroDivisionError("reciprocal of zero")
    shift = w_frac + out_fmt.frac_bits
    q = restoring_divide(1 << shift, abs(w_raw), shift + 1)
    return saturate(q if w_raw > 0 else -q, out_fmt)


# ---------------------------------------------------------------------------
# Vector arithmetic on raw int64 arrays


def _as_exact(a: np.ndarray, b: np.ndarray):
    """Pick int64 if the product provably fits, else Python-int object arrays."""
    amax = int(np.max(np.abs(a))) if a.size else 0
    bmax = int(np.max(np.abs(b))) if b.size else 0
    if amax.bit_length() + bmax.bit_length() <= 62:
        return a.astype(np.int64), b.astype(np.int64), False
    return a.astype(object), b.astype(object), True


def round_shift_array(values: np.ndarray, shift: int) -> np.ndarray:
    if shift <= 0:
        return values * (1 << -shift)
    half = 1 << (shift - 1)
    if values.dtype == object:
        mag = (np.abs(values) + half) // (1 << shift)
    else:
        mag = (np.abs(values) + half) >> shift
    return np.where(values >= 0, mag, -mag)


def saturate_array(raw: np.ndarray, fmt: QFormat) -> np.ndarray:
    if raw.dtype == object:
        out = np.array([min(max(int(v), fmt.lo), fmt.hi) for v in raw.ravel()], dtype=np.int64)
        return out.reshape(raw.shape)
    return np.clip(raw, fmt.lo, fmt.hi).astype(np.int64)


def quantize_array(x, fmt: QFormat) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    # Scaling by 2**frac is exact; clipping first keeps |y| < 2**52 so y+0.5 is exact.
    y = np.clip(x * float(1 << fmt.frac_bits), fmt.lo - 1.0, fmt.hi + 1.0)
    mag = np.floor(np.abs(y) + 0.5)
    raw = np.where(y >= 0, mag, -mag)
    return np.clip(raw, fmt.lo, fmt.hi).astype(np.int64)


def dequantize(raw, fmt: QFormat) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / float(1 << fmt.frac_bits)


def _mul_round(a_raw, a_frac: int, b_raw, b_frac: int, out_frac: int) -> np.ndarray:
    """Exact product rounded to ``out_frac`` fractional bits, not yet saturated."""
    a, b, _ = _as_exact(np.asarray(a_raw), np.asarray(b_raw))
    return round_shift_array(a * b, a_frac + b_frac - out_frac)


def fx_mul_array(a_raw, a_frac: int, b_raw, b_frac: int, out_fmt: QFormat) -> np.ndarray:
    return saturate_array(_mul_round(a_raw, a_frac, b_raw, b_frac, out_fmt.frac_bits), out_fmt)


def reciprocal_array(w_raw: np.ndarray, w_frac: int, out_fmt: QFormat = Q_PARAM) -> np.ndarray:
    """Vector form of :func:`reciprocal`; zero inputs give 0 (caller masks them)."""
    w = np.asarray(w_raw, dtype=np.int64)
    shift = w_frac + out_fmt.frac_bits
    if shift > 62:
        raise ValueError("reciprocal numerator exceeds int64")
    mag = np.abs(w)
    safe = np.where(mag == 0, 1, mag)
    q = np.where(mag == 0, 0, (np.int64(1) << shift) // safe)
    return np.clip(np.where(w > 0, q, -q), out_fmt.lo, out_fmt.hi).astype(np.int64)


# ---------------------------------------------------------------------------
# Datapath stages


@dataclass(frozen=True, eq=False)
class QHomography:
    m: np.ndarray  # 3x3 raw Q_PARAM

    @classmethod
    def from_float(cls, H: Homography) -> "QHomography":
        return cls(quantize_array(H.m, Q_PARAM))

    def to_float(self) -> np.ndarray:
        return dequantize(self.m, Q_PARAM)


@dataclass(frozen=True, eq=False)
class QPropCoeffs:
    a: np.ndarray
    bx: np.ndarray
    by: np.ndarray
    cx: int
    cy: int

    @classmethod
    def from_float(cls, phi: PropCoeffs) -> "QPropCoeffs":
        return cls(
            quantize_array(phi.a, Q_PARAM),
            quantize_array(phi.bx, Q_PARAM),
            quantize_array(phi.by, Q_PARAM),
            int(quantize_array(phi.cx, Q_PARAM)),
            int(quantize_array(phi.cy, Q_PARAM)),
        )

    def __len__(self) -> int:
        return len(self.a)


_ACC_FRAC = Q_PARAM.frac_bits + Q_COORD.frac_bits  # homogeneous accumulator, Q?.28


def q_canonical_backproject(xq, yq, Hq: QHomography):
    """Fixed-point ``H @ (x, y, 1)`` followed by normalization.

    ``xq, yq`` are raw Q_COORD arrays. Returns raw Q_COORD ``(x0, y0)`` and a
    validity mask. ``w == 0`` invalidates the event, and so does a Z0
    coordinate outside the Q_COORD range: the raw saturates, but a clamped
    canonical point would cast wrong votes on every other plane.
    """
    x = np.asarray(xq, dtype=np.int64)
    y = np.asarray(yq, dtype=np.int64)
    m = Hq.m.astype(np.int64)
    lift = Q_COORD.frac_bits
    # Full-width accumulation; no rounding inside the dot product.
    u = m[0, 0] * x + m[0, 1] * y + (m[0, 2] << lift)
    v = m[1, 0] * x + m[1, 1] * y + (m[1, 2] << lift)
    w = m[2, 0] * x + m[2, 1] * y + (m[2, 2] << lift)
    valid = w != 0
    rw = reciprocal_array(w, _ACC_FRAC, Q_PARAM)
    x0 = _mul_round(u, _ACC_FRAC, rw, Q_PARAM.frac_bits, Q_COORD.frac_bits)
    y0 = _mul_round(v, _ACC_FRAC, rw, Q_PARAM.frac_bits, Q_COORD.frac_bits)
    for c in (x0, y0):
        valid &= (c >= Q_COORD.lo) & (c <= Q_COORD.hi)
    x0 = saturate_array(x0, Q_COORD)
    y0 = saturate_array(y0, Q_COORD)
    x0 = np.where(valid, x0, 0)
    y0 = np.where(valid, y0, 0)
    return x0, y0, valid


def q_plane_coords(x0q, y0q, phi_q: QPropCoeffs):
    """Integer plane coordinates ``(nz, n)`` before any bounds check."""
    x0 = np.asarray(x0q, dtype=np.int64)
    y0 = np.asarray(y0q, dtype=np.int64)
    up = Q_PARAM.frac_bits - Q_COORD.frac_bits
    dx = (x0 << up) - phi_q.cx  # Q?.21
    dy = (y0 << up) - phi_q.cy
    f = Q_PARAM.frac_bits
    accx = phi_q.a[:, None] * dx[None, :] + ((phi_q.bx + phi_q.cx) << f)[:, None]  # Q?.42
    accy = phi_q.a[:, None] * dy[None, :] + ((phi_q.by + phi_q.cy) << f)[:, None]
    return round_shift_array(accx, 2 * f), round_shift_array(accy, 2 * f)


def q_generate_votes(x0q, y0q, valid, phi_q: QPropCoeffs, w: int, h: int):
    """Vote addresses (plane-major, then event order) and the projection-miss count."""
    valid = np.asarray(valid, dtype=bool)
    xi, yi = q_plane_coords(np.asarray(x0q)[valid], np.asarray(y0q)[valid], phi_q)
    # Values outside the unsigned 8-bit range are unrepresentable: a miss, never clamped.
    hit = (xi >= Q_ZI.lo) & (xi <= Q_ZI.hi) & (yi >= Q_ZI.lo) & (yi <= Q_ZI.hi)
    hit &= (xi < w) & (yi < h)
    nz = len(phi_q)
    plane = np.broadcast_to(np.arange(nz, dtype=np.int64)[:, None], xi.shape)
    addrs = plane[hit] * (w * h) + yi[hit] * w + xi[hit]
    misses = int(hit.size - np.count_nonzero(hit))
    return addrs.astype(np.int64), misses


# ---------------------------------------------------------------------------
# Raw buffer dumps

_QRAW_MAGIC = b"QRAW"
_QRAW_HEADER = struct.Struct("<4s8sBBBxI")
QRAW_HEADER_SIZE = _QRAW_HEADER.size


def dump_qbuffer(raws, fmt: QFormat, fh) -> int:
    """Write ``magic | label | total | frac | signed | count`` then little-endian raws."""
    arr = np.asarray(raws).ravel()
    if arr.size and (arr.min() < fmt.lo or arr.max() > fmt.hi):
        raise ValueError(f"raws do not fit {fmt.label}")
    payload = arr.astype(fmt.numpy_dtype).tobytes()
    header = _QRAW_HEADER.pack(
        _QRAW_MAGIC, fmt.label.encode("ascii"), fmt.total_bits, fmt.frac_bits, int(fmt.signed), arr.size
    )
    fh.write(header)
    fh.write(payload)
    return len(header) + len(payload)


def load_qbuffer(fh) -> tuple[np.ndarray, QFormat]:
    header = fh.read(_QRAW_HEADER.size)
    magic, _label, total, frac, signed, count = _QRAW_HEADER.unpack(header)
    if magic != _QRAW_MAGIC:
        raise ValueError("not a QRAW buffer")
    fmt = QFormat(total, frac, bool(signed))
    data = np.frombuffer(fh.read(count * fmt.numpy_dtype.itemsize), dtype=fmt.numpy_dtype)
    return data.astype(np.int64), fmt
