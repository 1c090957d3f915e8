"""Patch tiling with half-size overlap, shift augmentation, and edge gating.

The grid walks each axis in stride steps and always appends the
edge-aligned final position, so the patch union covers every pixel even
when the extent is not a stride multiple. Background patches are kept
only when enough of their pixels carry a strong principal-value gradient;
flat noise fails the gate, fringes pass it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .raster import PhaseRaster, phase_gradient


@dataclass(frozen=True)
class PatchSpec:
    """Tiling parameters; stride and shift default to half and a quarter
    of the patch size."""

    patch_size: int = 224
    stride: int | None = None
    grad_threshold_rad_per_px: float = 0.35
    edge_fraction_threshold: float = 0.10
    augment_copies: int = 8
    augment_max_shift: int | None = None

    def __post_init__(self):
        if self.patch_size < 8:
            raise ValueError(f"patch_size must be >= 8, got {self.patch_size}")
        if self.stride is None:
            object.__setattr__(self, "stride", self.patch_size // 2)
        if self.augment_max_shift is None:
            object.__setattr__(self, "augment_max_shift", self.patch_size // 4)
        if not 0 < self.stride <= self.patch_size:
            raise ValueError(
                f"stride must be in (0, patch_size], got {self.stride} for patch {self.patch_size}"
            )
        if self.grad_threshold_rad_per_px <= 0:
            raise ValueError("grad_threshold_rad_per_px must be positive")
        if not 0.0 <= self.edge_fraction_threshold <= 1.0:
            raise ValueError("edge_fraction_threshold must be in [0, 1]")
        if self.augment_copies < 0:
            raise ValueError("augment_copies must be >= 0")


@dataclass(frozen=True)
class Patch:
    """An owned phase window cut from a source raster."""

    origin: tuple[int, int]  # (x, y) of the top-left pixel
    size: int
    values: np.ndarray = field(repr=False)
    edge_score: float = 0.0


def _axis_positions(extent: int, patch_size: int, stride: int) -> list[int]:
    last = extent - patch_size
    positions = list(range(0, last + 1, stride))
    if positions[-1] != last:
        positions.append(last)
    return positions


def grid_positions(width: int, height: int, spec: PatchSpec) -> list[tuple[int, int]]:
    """Ordered (x, y) patch origins covering the raster, row-major."""
    if width < spec.patch_size:
        raise ValueError(f"raster width {width} smaller than patch_size {spec.patch_size}")
    if height < spec.patch_size:
        raise ValueError(f"raster height {height} smaller than patch_size {spec.patch_size}")
    xs = _axis_positions(width, spec.patch_size, spec.stride)
    ys = _axis_positions(height, spec.patch_size, spec.stride)
    return [(x, y) for y in ys for x in xs]


def grid_count(width: int, height: int, spec: PatchSpec) -> int:
    """Closed-form number of grid positions."""
    return len(_axis_positions(width, spec.patch_size, spec.stride)) * len(
        _axis_positions(height, spec.patch_size, spec.stride)
    )


def edge_score(values: np.ndarray, spec: PatchSpec) -> float:
    """Fraction of non-masked gradient pixels above the gradient threshold.

    Patches that are more than half masked score 0 outright.
    """
    if values.shape[0] < 2 or values.shape[1] < 2:
        raise ValueError("edge_score requires a patch of at least 2x2 pixels")
    masked = np.isnan(values)
    if masked.mean() > 0.5:
        return 0.0
    mag = phase_gradient(values).magnitude
    valid = ~np.isnan(mag)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0
    return float((mag[valid] > spec.grad_threshold_rad_per_px).sum() / n_valid)


def extract(raster: PhaseRaster, x: int, y: int, size: int, spec: PatchSpec | None = None) -> Patch:
    """Copy one window out of the raster, scoring it if a spec is given."""
    window = np.ascontiguousarray(raster.values[y : y + size, x : x + size])
    score = edge_score(window, spec) if spec is not None else 0.0
    return Patch(origin=(x, y), size=size, values=window, edge_score=score)


def patch_center(origin: tuple[int, int], size: int) -> tuple[float, float]:
    return (origin[0] + size / 2.0, origin[1] + size / 2.0)


def select_negatives(
    raster: PhaseRaster,
    spec: PatchSpec,
    exclusion_center: tuple[float, float] | None = None,
    exclusion_radius: float = 0.0,
) -> list[Patch]:
    """Grid patches outside the exclusion disc that pass the edge gate."""
    out = []
    for x, y in grid_positions(raster.width, raster.height, spec):
        if exclusion_center is not None:
            cx, cy = patch_center((x, y), spec.patch_size)
            if (cx - exclusion_center[0]) ** 2 + (cy - exclusion_center[1]) ** 2 <= exclusion_radius**2:
                continue
        patch = extract(raster, x, y, spec.patch_size, spec)
        if patch.edge_score >= spec.edge_fraction_threshold:
            out.append(patch)
    return out


def augment_positives(
    raster: PhaseRaster,
    center: tuple[float, float],
    spec: PatchSpec,
    seed: int = 0,
) -> list[Patch]:
    """One centered patch plus seeded random-shift copies, all containing center.

    Shift offsets are drawn uniformly from the square
    [-augment_max_shift, +augment_max_shift]^2 and patch origins are
    clamped to the raster; duplicates collapse, so the result holds at
    most augment_copies + 1 patches.
    """
    size = spec.patch_size
    w, h = raster.width, raster.height
    if w < size or h < size:
        raise ValueError("raster smaller than patch size; no patch can contain the center")
    cx, cy = center
    if not (0 <= cx < w and 0 <= cy < h):
        raise ValueError(f"center {center} outside raster {w}x{h}")

    def clamped_origin(shift_x: int, shift_y: int) -> tuple[int, int]:
        ox = int(round(cx - size / 2.0)) + shift_x
        oy = int(round(cy - size / 2.0)) + shift_y
        return (min(max(ox, 0), w - size), min(max(oy, 0), h - size))

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7A6)))
    origins = [clamped_origin(0, 0)]
    m = spec.augment_max_shift
    for _ in range(spec.augment_copies):
        sx = int(rng.integers(-m, m + 1))
        sy = int(rng.integers(-m, m + 1))
        origins.append(clamped_origin(sx, sy))
    seen = set()
    patches = []
    for ox, oy in origins:
        if (ox, oy) in seen:
            continue
        seen.add((ox, oy))
        if not (ox <= cx < ox + size and oy <= cy < oy + size):
            continue  # oversized shifts may escape the center; drop them
        patches.append(extract(raster, ox, oy, size))
    return patches
