"""Synthetic wrapped interferograms: point-pressure deformation + turbulent noise.

Deformation uses the classical point pressure source in an elastic
half-space: at horizontal distance r from a source of depth d and volume
change dV, with R^2 = r^2 + d^2 and C = (1 - nu) * dV / pi, the surface
displacement is u = C * (dx, dy, d) / R^3. The radar phase along a line
of sight l is -(4 pi / lambda) * (u . l), so inflation moves the ground
toward the satellite and shows up as concentric fringes once wrapped.

Atmospheric screens come from spectral synthesis of a power-law random
field: a seeded complex Gaussian spectrum is shaped by k^(-beta/2), the
DC bin zeroed, inverse transformed, and the real part rescaled to an
exact sample mean/std.

Coordinates: x grows with column index (east), y grows with row index.
All generation is a pure function of its parameters and seeds; sample i
of a dataset derives its own SeedSequence((master_seed, i)) so serial and
parallel generation give identical bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .raster import PhaseRaster, wrap_to_f32, write_raster

C_BAND_WAVELENGTH_M = 0.0556

LABEL_DEFORMATION = 1
LABEL_BACKGROUND = 0

# a source is labeled deformation only if it produces at least one full fringe
MIN_PEAK_PHASE_RAD = 2.0 * math.pi


@dataclass(frozen=True)
class MogiParams:
    """Point pressure source; positive delta_volume_m3 means inflation."""

    center_x: float
    center_y: float
    depth_m: float
    delta_volume_m3: float
    poisson: float = 0.25
    look_incidence_deg: float = 34.0
    look_azimuth_deg: float = 0.0

    def __post_init__(self):
        if not self.depth_m > 0:
            raise ValueError(f"depth_m must be > 0, got {self.depth_m}")
        if self.delta_volume_m3 == 0:
            raise ValueError("delta_volume_m3 must be nonzero")
        if not 0 < self.poisson < 0.5:
            raise ValueError(f"poisson must be in (0, 0.5), got {self.poisson}")
        if not 0 <= self.look_incidence_deg < 90:
            raise ValueError(
                f"look_incidence_deg must be in [0, 90), got {self.look_incidence_deg}"
            )


@dataclass(frozen=True)
class AtmosphereParams:
    """Power-law turbulent phase screen parameters."""

    std_rad: float = 1.0
    beta: float = 2.7
    seed: int = 0

    def __post_init__(self):
        if self.std_rad < 0:
            raise ValueError(f"std_rad must be >= 0, got {self.std_rad}")
        if not 1.0 <= self.beta <= 4.0:
            raise ValueError(f"beta must be in [1, 4], got {self.beta}")


@dataclass
class SampleRecord:
    """One labeled training patch and its provenance."""

    id: str
    path: str
    label: int
    origin: str  # "synthetic" | "feedback"
    center: tuple[float, float] | None
    params: dict | None
    seed: int

    def to_json(self) -> str:
        center = list(self.center) if self.center is not None else None
        return json.dumps(
            {
                "id": self.id,
                "path": self.path,
                "label": self.label,
                "origin": self.origin,
                "center": center,
                "params": self.params,
                "seed": self.seed,
            }
        )

    @staticmethod
    def from_json(line: str) -> "SampleRecord":
        d = json.loads(line)
        center = tuple(d["center"]) if d.get("center") is not None else None
        return SampleRecord(
            id=d["id"],
            path=d["path"],
            label=int(d["label"]),
            origin=d["origin"],
            center=center,
            params=d.get("params"),
            seed=int(d.get("seed", 0)),
        )


def save_manifest(records: list[SampleRecord], path) -> None:
    """Write one record per line; atomic via temp + rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(rec.to_json() + "\n")
    os.replace(tmp, path)


def load_manifest(path, resolve_paths: bool = True) -> list[SampleRecord]:
    """Read a manifest; relative raster paths resolve against its directory."""
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = SampleRecord.from_json(line)
            if resolve_paths and rec.path and not os.path.isabs(rec.path):
                rec.path = str(path.parent / rec.path)
            records.append(rec)
    return records


def _mogi_phase_grid(
    params: MogiParams,
    x_px: np.ndarray,
    y_px: np.ndarray,
    pixel_spacing_m: float,
    wavelength_m: float,
) -> np.ndarray:
    """Unwrapped LOS phase on the grid spanned by pixel coordinate vectors."""
    dx = (x_px[None, :] - params.center_x) * pixel_spacing_m
    dy = (y_px[:, None] - params.center_y) * pixel_spacing_m
    r2 = dx * dx + dy * dy
    d = params.depth_m
    R3 = np.power(r2 + d * d, 1.5)
    coeff = (1.0 - params.poisson) * params.delta_volume_m3 / math.pi
    ue = coeff * dx / R3
    un = coeff * dy / R3
    uz = coeff * d / R3
    theta = math.radians(params.look_incidence_deg)
    alpha = math.radians(params.look_azimuth_deg)
    le = math.sin(theta) * math.cos(alpha)
    ln = math.sin(theta) * math.sin(alpha)
    lz = math.cos(theta)
    los = ue * le + un * ln + uz * lz
    return -(4.0 * math.pi / wavelength_m) * los


def mogi_los_phase(
    params: MogiParams,
    width: int,
    height: int,
    pixel_spacing_m: float = 100.0,
    wavelength_m: float = C_BAND_WAVELENGTH_M,
) -> np.ndarray:
    """Unwrapped line-of-sight phase (radians, float64) of the source.

    Not a PhaseRaster: values are intentionally unbounded until wrapped.
    """
    if not wavelength_m > 0:
        raise ValueError(f"wavelength_m must be > 0, got {wavelength_m}")
    x = np.arange(width, dtype=np.float64)
    y = np.arange(height, dtype=np.float64)
    return _mogi_phase_grid(params, x, y, pixel_spacing_m, wavelength_m)


def delta_volume_for_peak_phase(
    peak_rad: float,
    depth_m: float,
    poisson: float = 0.25,
    look_incidence_deg: float = 34.0,
    wavelength_m: float = C_BAND_WAVELENGTH_M,
) -> float:
    """Volume change giving |phase| ~= peak_rad directly above the source."""
    cos_t = math.cos(math.radians(look_incidence_deg))
    return peak_rad * wavelength_m * depth_m**2 / (4.0 * (1.0 - poisson) * cos_t)


def turbulent_atmosphere(params: AtmosphereParams, width: int, height: int) -> np.ndarray:
    """Unwrapped power-law phase screen (radians, float64).

    Exact sample statistics: mean 0, std equal to params.std_rad.
    """
    if width < 8 or height < 8:
        raise ValueError(f"atmosphere grid must be at least 8x8, got {width}x{height}")
    rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    spec = rng.standard_normal((height, width)) + 1j * rng.standard_normal((height, width))
    ky = np.fft.fftfreq(height)[:, None]
    kx = np.fft.fftfreq(width)[None, :]
    k = np.hypot(kx, ky)
    k[0, 0] = 1.0  # placeholder; DC is zeroed below
    spec *= k ** (-params.beta / 2.0)
    spec[0, 0] = 0.0
    fieldv = np.fft.ifft2(spec).real
    std = fieldv.std()
    if std == 0.0:
        return np.zeros((height, width))
    return (fieldv - fieldv.mean()) * (params.std_rad / std)


def make_interferogram(
    mogi: MogiParams | None,
    atmo: AtmosphereParams,
    width: int,
    height: int,
    pixel_spacing_m: float = 100.0,
    wavelength_m: float = C_BAND_WAVELENGTH_M,
) -> tuple[PhaseRaster, SampleRecord]:
    """Wrap the sum of deformation and atmosphere into a labeled raster.

    label = 1 only when a source is present and its peak |phase| reaches a
    full fringe (2*pi); weaker sources are undetectable by construction
    and labeled background.
    """
    unwrapped = np.zeros((height, width))
    label = LABEL_BACKGROUND
    center = None
    if mogi is not None:
        deform = mogi_los_phase(mogi, width, height, pixel_spacing_m, wavelength_m)
        unwrapped += deform
        center = (mogi.center_x, mogi.center_y)
        if np.abs(deform).max() >= MIN_PEAK_PHASE_RAD:
            label = LABEL_DEFORMATION
    unwrapped += turbulent_atmosphere(atmo, width, height)
    wrapped = PhaseRaster(values=wrap_to_f32(unwrapped), pixel_spacing_m=pixel_spacing_m)
    record = SampleRecord(
        id=f"syn-{atmo.seed:x}",
        path="",
        label=label,
        origin="synthetic",
        center=center,
        params={
            "mogi": asdict(mogi) if mogi is not None else None,
            "atmo": asdict(atmo),
        },
        seed=atmo.seed,
    )
    return wrapped, record


@dataclass(frozen=True)
class ParamRanges:
    """Uniform sampling ranges for build_dataset."""

    depth_m: tuple[float, float] = (1500.0, 5000.0)
    delta_volume_m3: tuple[float, float] = (0.5e6, 5e6)  # magnitude; sign is random
    std_rad: tuple[float, float] = (0.3, 1.5)
    beta: tuple[float, float] = (2.3, 3.1)


def _sample_positive_mogi(
    rng: np.random.Generator,
    ranges: ParamRanges,
    size: int,
    pixel_spacing_m: float,
    wavelength_m: float,
) -> MogiParams:
    # rejection-sample until the source clears the one-fringe label threshold
    for _ in range(200):
        depth = rng.uniform(*ranges.depth_m)
        mag = rng.uniform(*ranges.delta_volume_m3)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        cx = rng.uniform(size / 4.0, 3.0 * size / 4.0)
        cy = rng.uniform(size / 4.0, 3.0 * size / 4.0)
        params = MogiParams(center_x=cx, center_y=cy, depth_m=depth, delta_volume_m3=sign * mag)
        peak = np.abs(
            mogi_los_phase(params, size, size, pixel_spacing_m, wavelength_m)
        ).max()
        if peak >= MIN_PEAK_PHASE_RAD:
            return params
    raise RuntimeError("could not sample a one-fringe source; widen param ranges")


def build_dataset(
    out_dir,
    count: int,
    positive_fraction: float = 0.5,
    size: int = 224,
    param_ranges: ParamRanges | None = None,
    master_seed: int = 0,
    pixel_spacing_m: float = 100.0,
    wavelength_m: float = C_BAND_WAVELENGTH_M,
) -> Path:
    """Generate a labeled patch dataset; returns the manifest path.

    Deterministic in master_seed: each sample derives its own
    SeedSequence((master_seed, index)). Class counts are exactly
    round(count * positive_fraction) positives, remainder negatives.
    """
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValueError(f"positive_fraction must be in [0, 1], got {positive_fraction}")
    ranges = param_ranges or ParamRanges()
    out_dir = Path(out_dir)
    raster_dir = out_dir / "rasters"
    raster_dir.mkdir(parents=True, exist_ok=True)
    n_pos = round(count * positive_fraction)

    records = []
    for idx in range(count):
        ss = np.random.SeedSequence((master_seed, idx))
        rng = np.random.default_rng(ss)
        atmo_seed = int(rng.integers(0, 2**63))
        atmo = AtmosphereParams(
            std_rad=float(rng.uniform(*ranges.std_rad)),
            beta=float(rng.uniform(*ranges.beta)),
            seed=atmo_seed,
        )
        mogi = None
        if idx < n_pos:
            mogi = _sample_positive_mogi(rng, ranges, size, pixel_spacing_m, wavelength_m)
        wrapped, record = make_interferogram(
            mogi, atmo, size, size, pixel_spacing_m, wavelength_m
        )
        record.id = f"s{idx:05d}"
        rel = f"rasters/{record.id}.fph"
        write_raster(wrapped, raster_dir / f"{record.id}.fph")
        record.path = rel
        records.append(record)

    manifest = out_dir / "manifest.jsonl"
    save_manifest(records, manifest)
    return manifest


def write_large_interferogram(
    path,
    width: int,
    height: int,
    sources: list[MogiParams] | None = None,
    noise_std_rad: float = 0.05,
    seed: int = 0,
    pixel_spacing_m: float = 100.0,
    wavelength_m: float = C_BAND_WAVELENGTH_M,
    chunk_rows: int = 512,
) -> None:
    """Stream a synthetic raster of arbitrary size to disk row-band by row-band.

    Content is the closed-form deformation of `sources` plus mild white
    noise, so memory stays bounded regardless of raster size (no FFT).
    """
    import struct

    sources = sources or []
    x = np.arange(width, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", b"FPH1", width, height, 0))
        for chunk_idx, row0 in enumerate(range(0, height, chunk_rows)):
            row1 = min(row0 + chunk_rows, height)
            y = np.arange(row0, row1, dtype=np.float64)
            unwrapped = np.zeros((row1 - row0, width))
            for src in sources:
                unwrapped += _mogi_phase_grid(src, x, y, pixel_spacing_m, wavelength_m)
            if noise_std_rad > 0:
                rng = np.random.default_rng(np.random.SeedSequence((seed, chunk_idx)))
                unwrapped += rng.normal(0.0, noise_std_rad, size=unwrapped.shape)
            f.write(wrap_to_f32(unwrapped).astype("<f4").tobytes())


def scene_with_source(
    seed: int,
    width: int = 672,
    height: int = 672,
    peak_fringes: float = 3.0,
    atmo_std_rad: float = 0.5,
    depth_m: float = 3000.0,
    margin: float = 0.25,
) -> tuple[PhaseRaster, MogiParams]:
    """Convenience scene: one source of a target fringe count + atmosphere."""
    rng = np.random.default_rng(np.random.SeedSequence((0x5CE4E, seed)))
    cx = float(rng.uniform(margin * width, (1 - margin) * width))
    cy = float(rng.uniform(margin * height, (1 - margin) * height))
    dv = delta_volume_for_peak_phase(peak_fringes * 2.0 * math.pi, depth_m)
    mogi = MogiParams(center_x=cx, center_y=cy, depth_m=depth_m, delta_volume_m3=dv)
    atmo = AtmosphereParams(std_rad=atmo_std_rad, beta=2.7, seed=int(rng.integers(0, 2**63)))
    wrapped, _ = make_interferogram(mogi, atmo, width, height)
    return wrapped, mogi
