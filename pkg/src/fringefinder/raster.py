"""Wrapped-phase rasters: principal-value arithmetic, FPH1 file I/O, PNG export.

A raster is a row-major float32 grid of phase values in radians. Every
non-masked value lies on the principal branch (-pi, pi]; masked pixels
carry quiet NaN. Since float32(pi) is slightly larger than pi, the branch
bounds are enforced against the float32 rounding of pi, and values that
round to -float32(pi) are folded to +float32(pi) so the half-open interval
stays exact in storage.

FPH1 format (little-endian): magic ``FPH1``, u32 width, u32 height,
u32 flags, then width*height float32 payload, row 0 = top. flags=0 marks
phase data; flags=1 marks probability data (see merger module).
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import kernels

TWO_PI = 2.0 * math.pi
PI_F32 = np.float32(np.pi)

FLAG_PHASE = 0
FLAG_PROBABILITY = 1

_MAGIC = b"FPH1"
_HEADER = struct.Struct("<4sIII")
HEADER_BYTES = _HEADER.size


class RasterFormatError(ValueError):
    """Malformed FPH1 file; the message names the offending field."""


def wrap_phase(phi: float) -> float:
    """Wrap an unbounded phase to the principal branch (-pi, pi].

    The result differs from `phi` by an exact integer multiple of 2*pi
    (to floating-point accuracy) and values already on the branch are
    returned bit-identically, which makes wrapping idempotent.
    """
    phi = float(phi)
    if not math.isfinite(phi):
        raise ValueError(f"wrap_phase requires finite input, got {phi!r}")
    if -math.pi < phi <= math.pi:
        return phi
    r = math.pi - ((math.pi - phi) % TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_array(phi: np.ndarray) -> np.ndarray:
    """Vectorized wrap_phase in float64; NaN passes through as NaN."""
    phi = np.asarray(phi, dtype=np.float64)
    r = np.pi - np.mod(np.pi - phi, TWO_PI)
    r = np.where(r <= -np.pi, r + TWO_PI, r)
    return np.where((phi > -np.pi) & (phi <= np.pi), phi, r)


def wrap_to_f32(phi: np.ndarray) -> np.ndarray:
    """Wrap in float64, then cast to the float32 storage branch.

    Values in (-pi, pi] that round down to -float32(pi) are folded to
    +float32(pi) (the same angle modulo 2*pi), keeping the stored branch
    strictly half-open.
    """
    out = wrap_array(phi).astype(np.float32)
    out[out == -PI_F32] = PI_F32
    return out


@dataclass(frozen=True)
class PhaseRaster:
    """Immutable wrapped-phase grid; NaN marks masked pixels."""

    values: np.ndarray
    pixel_spacing_m: float = 100.0

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"raster values must be 2-D, got shape {v.shape}")
        if v.dtype != np.float32:
            raise ValueError(f"raster values must be float32, got {v.dtype}")
        if v.shape[0] == 0 or v.shape[1] == 0:
            raise ValueError("raster dimensions must be positive")
        if not self.pixel_spacing_m > 0:
            raise ValueError(f"pixel_spacing_m must be > 0, got {self.pixel_spacing_m}")
        finite = v[np.isfinite(v)]
        if finite.size and (finite.max() > PI_F32 or finite.min() <= -PI_F32):
            raise ValueError("non-masked phase values must lie in (-pi, pi]")
        v.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return np.isnan(self.values)


@dataclass(frozen=True)
class GradientField:
    """Per-pixel phase gradient magnitude (rad/px); NaN where masked."""

    magnitude: np.ndarray = field(repr=False)

    @property
    def height(self) -> int:
        return self.magnitude.shape[0]

    @property
    def width(self) -> int:
        return self.magnitude.shape[1]


def phase_gradient(raster: PhaseRaster | np.ndarray) -> GradientField:
    """Principal-value gradient magnitude field of a wrapped raster.

    Forward differences with backward fallback on the last row/column;
    each per-axis difference is wrapped before the magnitude, so a clean
    ramp keeps its slope across 2*pi fringe seams. A pixel is masked when
    any value in its difference stencil is masked.
    """
    values = raster.values if isinstance(raster, PhaseRaster) else raster
    h, w = values.shape
    if h < 2 or w < 2:
        raise ValueError(f"phase_gradient requires at least 2x2 pixels, got {w}x{h}")
    return GradientField(magnitude=kernels.wrapped_gradient(values))


def write_raster(raster: PhaseRaster, path, flags: int = FLAG_PHASE) -> None:
    arr = np.ascontiguousarray(raster.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, raster.width, raster.height, flags))
        f.write(arr.tobytes())


def write_fph_array(arr: np.ndarray, path, flags: int) -> None:
    """Write a bare float32 array as FPH1 without phase-range validation."""
    arr = np.ascontiguousarray(arr, dtype="<f4")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, w, h, flags))
        f.write(arr.tobytes())


def _parse_header(raw: bytes, path) -> tuple[int, int, int]:
    if len(raw) < HEADER_BYTES:
        raise RasterFormatError(f"{path}: header truncated, file has {len(raw)} bytes")
    magic, width, height, flags = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    if width == 0:
        raise RasterFormatError(f"{path}: width is zero")
    if height == 0:
        raise RasterFormatError(f"{path}: height is zero")
    if flags not in (FLAG_PHASE, FLAG_PROBABILITY):
        raise RasterFormatError(f"{path}: unknown flags value {flags}")
    return width, height, flags


def read_fph_array(path) -> tuple[np.ndarray, int]:
    """Read any FPH1 file to (float32 array, flags), bit-exactly."""
    with open(path, "rb") as f:
        raw = f.read()
    width, height, flags = _parse_header(raw, path)
    expected = width * height * 4
    actual = len(raw) - HEADER_BYTES
    if actual != expected:
        raise RasterFormatError(
            f"{path}: payload length mismatch, expected {expected} bytes, got {actual}"
        )
    arr = np.frombuffer(raw, dtype="<f4", offset=HEADER_BYTES).reshape(height, width)
    return arr.astype(np.float32), flags


def read_raster(path, pixel_spacing_m: float = 100.0) -> PhaseRaster:
    arr, flags = read_fph_array(path)
    if flags != FLAG_PHASE:
        raise RasterFormatError(f"{path}: flags={flags}, expected phase data (flags=0)")
    return PhaseRaster(values=arr, pixel_spacing_m=pixel_spacing_m)


class FphWindowReader:
    """Windowed row access to an FPH1 file without loading the payload.

    Used by the streaming detection pipeline to keep resident memory
    bounded on rasters far larger than RAM budgets.
    """

    def __init__(self, path):
        self.path = os.fspath(path)
        with open(self.path, "rb") as f:
            raw = f.read(HEADER_BYTES)
            self.width, self.height, self.flags = _parse_header(raw, self.path)
        expected = self.width * self.height * 4
        actual = os.path.getsize(self.path) - HEADER_BYTES
        if actual != expected:
            raise RasterFormatError(
                f"{self.path}: payload length mismatch, expected {expected} bytes, got {actual}"
            )

    def read_rows(self, row0: int, row1: int) -> np.ndarray:
        """Return rows [row0, row1) as a float32 array."""
        if not (0 <= row0 < row1 <= self.height):
            raise ValueError(f"row range [{row0}, {row1}) outside raster height {self.height}")
        nrows = row1 - row0
        count = nrows * self.width
        with open(self.path, "rb") as f:
            f.seek(HEADER_BYTES + row0 * self.width * 4)
            buf = f.read(count * 4)
        if len(buf) != count * 4:
            raise RasterFormatError(f"{self.path}: short read at row {row0}")
        return np.frombuffer(buf, dtype="<f4").reshape(nrows, self.width).astype(np.float32)


def payload_digest(path) -> int:
    """64-bit checksum of an FPH1 payload: byte sum mod 2^64.

    Chunked small enough to stay negligible against streaming budgets.
    """
    total = 0
    with open(path, "rb") as f:
        f.seek(HEADER_BYTES)
        while True:
            chunk = f.read(1 << 22)
            if not chunk:
                break
            total = (total + int(np.frombuffer(chunk, dtype=np.uint8).sum(dtype=np.uint64))) % (1 << 64)
    return total


def phase_to_rgb(values: np.ndarray) -> np.ndarray:
    """Map wrapped phase to a cyclic hue wheel (S=V=1); masked -> mid-gray.

    hue = (phi + pi) / 2pi * 360 degrees, continuous across the +-pi seam.
    """
    mask = np.isnan(values)
    phi = np.where(mask, 0.0, values).astype(np.float64)
    h6 = (phi + np.pi) / TWO_PI * 6.0
    h6 = np.mod(h6, 6.0)
    sector = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    ones = np.ones_like(f)
    zeros = np.zeros_like(f)
    q = 1.0 - f
    # sector table for S=V=1
    r = np.choose(sector, [ones, q, zeros, zeros, f, ones])
    g = np.choose(sector, [f, ones, ones, q, zeros, zeros])
    b = np.choose(sector, [zeros, zeros, f, ones, ones, q])
    rgb = np.stack([r, g, b], axis=-1)
    out = np.round(rgb * 255.0).astype(np.uint8)
    out[mask] = 128
    return out


def render_png(raster: PhaseRaster | np.ndarray, path) -> None:
    """Write the raster as an 8-bit PNG using the cyclic phase colormap."""
    values = raster.values if isinstance(raster, PhaseRaster) else raster
    Image.fromarray(phase_to_rgb(values), mode="RGB").save(path, format="PNG")
