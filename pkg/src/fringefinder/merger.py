"""Gaussian-weighted fusion of patch probabilities and blob extraction.

Each tested patch spreads its probability over its footprint with an
unnormalized Gaussian weight centered on the patch; the heatmap value at
a pixel is the weight-averaged probability over every patch covering it,
which keeps values inside [min p, max p]. Pixels no tested patch covers
stay masked (NaN), distinguishing "screened out by the edge gate" from
"confidently background".

Accumulation always runs in sorted-origin order so merges are bit-stable
regardless of input order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .raster import FLAG_PROBABILITY, read_fph_array, write_fph_array

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Heatmap:
    """Merged per-pixel deformation probability; NaN where untested."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = self.values
        finite = v[np.isfinite(v)]
        if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
            raise ValueError("heatmap probabilities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class Detection:
    """One above-threshold blob in a heatmap."""

    id: str
    centroid: tuple[float, float]  # (x, y)
    peak_score: float
    area_px: int
    bbox: tuple[int, int, int, int]  # inclusive (x0, y0, x1, y1)
    status: str = "pending"
    run_id: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "centroid": list(self.centroid),
            "peak_score": self.peak_score,
            "area_px": self.area_px,
            "bbox": list(self.bbox),
            "status": self.status,
            "run_id": self.run_id,
        }

    @staticmethod
    def from_dict(d: dict) -> "Detection":
        return Detection(
            id=d["id"],
            centroid=tuple(d["centroid"]),
            peak_score=float(d["peak_score"]),
            area_px=int(d["area_px"]),
            bbox=tuple(d["bbox"]),
            status=d.get("status", "pending"),
            run_id=d.get("run_id", ""),
        )


def gaussian_kernel(patch_size: int, sigma: float | None = None) -> np.ndarray:
    """Unnormalized Gaussian weights over a patch; center weight is exactly 1."""
    if sigma is None:
        sigma = patch_size / 4.0
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    c = (patch_size - 1) / 2.0
    i = np.arange(patch_size, dtype=np.float64)
    d2 = (i - c) ** 2
    return np.exp(-(d2[:, None] + d2[None, :]) / (2.0 * sigma * sigma))


class HeatmapAccumulator:
    """Streaming numerator/denominator accumulation over row windows.

    Patches must be added in non-decreasing origin-y order; rows above the
    current window base can then be finalized and flushed incrementally,
    which is what bounds memory on huge rasters.
    """

    def __init__(self, width: int, height: int, patch_size: int, sigma: float | None = None):
        self.width = width
        self.height = height
        self.patch_size = patch_size
        self.kernel = gaussian_kernel(patch_size, sigma)
        self.base = 0  # first raster row held in the window
        self.num = np.zeros((patch_size, width), dtype=np.float64)
        self.den = np.zeros((patch_size, width), dtype=np.float64)

    def add(self, origin: tuple[int, int], probability: float) -> None:
        x, y = origin
        p = self.patch_size
        if not (0 <= x <= self.width - p and 0 <= y <= self.height - p):
            raise ValueError(f"patch origin {origin} out of bounds for {self.width}x{self.height}")
        if not 0.0 <= probability <= 1.0:
            raise ValueError(f"probability {probability} outside [0, 1]")
        if y < self.base:
            raise ValueError(f"origin y={y} precedes already-finalized rows (base {self.base})")
        row = y - self.base
        self.num[row : row + p, x : x + p] += probability * self.kernel
        self.den[row : row + p, x : x + p] += self.kernel

    def advance_to(self, y: int) -> np.ndarray:
        """Finalize and return rows [base, y); slide the window to base=y."""
        dy = y - self.base
        if dy <= 0:
            return np.empty((0, self.width), dtype=np.float32)
        dy = min(dy, self.patch_size)
        out = self._finalize(self.num[:dy], self.den[:dy])
        self.num[:-dy] = self.num[dy:]
        self.num[-dy:] = 0.0
        self.den[:-dy] = self.den[dy:]
        self.den[-dy:] = 0.0
        self.base += dy
        if self.base < y:  # gap larger than the window: remaining rows are empty
            pad = np.full((y - self.base, self.width), np.nan, dtype=np.float32)
            out = np.vstack([out, pad])
            self.base = y
        return out

    def finish(self) -> np.ndarray:
        """Finalize all remaining rows up to the raster height."""
        rows = min(self.patch_size, self.height - self.base)
        out = self._finalize(self.num[:rows], self.den[:rows])
        self.base += rows
        if self.base < self.height:
            pad = np.full((self.height - self.base, self.width), np.nan, dtype=np.float32)
            out = np.vstack([out, pad])
            self.base = self.height
        return out

    @staticmethod
    def _finalize(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        out = np.full(num.shape, np.nan, dtype=np.float32)
        covered = den > 0
        out[covered] = (num[covered] / den[covered]).astype(np.float32)
        return np.clip(out, 0.0, 1.0, out=out)


def merge(
    probs: list[tuple[tuple[int, int], float]],
    dims: tuple[int, int],
    patch_size: int,
    sigma: float | None = None,
) -> Heatmap:
    """Fuse (origin, probability) pairs into a full heatmap in one call."""
    width, height = dims
    acc = HeatmapAccumulator(width, height, patch_size, sigma)
    rows = []
    for origin, p in sorted(probs, key=lambda item: (item[0][1], item[0][0])):
        flushed = acc.advance_to(origin[1])
        if flushed.size:
            rows.append(flushed)
        acc.add(origin, p)
    rows.append(acc.finish())
    values = np.vstack(rows) if rows else np.full((height, width), np.nan, dtype=np.float32)
    return Heatmap(values=values)


def extract_detections(
    heatmap: Heatmap | np.ndarray,
    threshold: float = 0.5,
    min_area_px: int = 100,
    run_id: str = "",
) -> list[Detection]:
    """8-connected components of {H >= threshold}, largest peak first.

    Masked pixels never join a component; blobs smaller than min_area_px
    are dropped. Centroids are score-weighted pixel means.
    """
    values = heatmap.values if isinstance(heatmap, Heatmap) else heatmap
    mask = np.zeros(values.shape, dtype=bool)
    finite = np.isfinite(values)
    mask[finite] = values[finite] >= threshold
    labels, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    detections = []
    for comp in range(1, count + 1):
        ys, xs = np.nonzero(labels == comp)
        if ys.size < min_area_px:
            continue
        scores = values[ys, xs].astype(np.float64)
        total = scores.sum()
        cx = float((xs * scores).sum() / total)
        cy = float((ys * scores).sum() / total)
        detections.append(
            Detection(
                id="",
                centroid=(cx, cy),
                peak_score=float(scores.max()),
                area_px=int(ys.size),
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
                run_id=run_id,
            )
        )
    detections.sort(key=lambda d: (-d.peak_score, d.centroid[1], d.centroid[0]))
    for i, det in enumerate(detections):
        det.id = f"{run_id}-d{i:03d}" if run_id else f"d{i:03d}"
    return detections


class StreamingDetector:
    """Run-based union-find blob extraction over row-streamed heatmap data.

    Produces the same components as extract_detections without ever
    holding the full heatmap, so gigapixel runs stay within budget.
    """

    def __init__(self, threshold: float, min_area_px: int, run_id: str = ""):
        self.threshold = threshold
        self.min_area_px = min_area_px
        self.run_id = run_id
        self.parent: list[int] = []
        self.stats: list[dict] = []
        self.prev_runs: list[tuple[int, int, int]] = []  # (x0, x1, label) on the previous row
        self.row = 0

    def _find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def _union(self, a: int, b: int) -> int:
        ra, rb = self._find(a), self._find(b)
        if ra == rb:
            return ra
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        sa, sb = self.stats[ra], self.stats[rb]
        sa["area"] += sb["area"]
        sa["sw"] += sb["sw"]
        sa["swx"] += sb["swx"]
        sa["swy"] += sb["swy"]
        sa["peak"] = max(sa["peak"], sb["peak"])
        sa["x0"] = min(sa["x0"], sb["x0"])
        sa["x1"] = max(sa["x1"], sb["x1"])
        sa["y0"] = min(sa["y0"], sb["y0"])
        sa["y1"] = max(sa["y1"], sb["y1"])
        return ra

    def push_row(self, values: np.ndarray) -> None:
        y = self.row
        mask = np.zeros(values.shape, dtype=bool)
        finite = np.isfinite(values)
        mask[finite] = values[finite] >= self.threshold
        runs = []
        x = 0
        w = mask.shape[0]
        while x < w:
            if not mask[x]:
                x += 1
                continue
            x1 = x
            while x1 + 1 < w and mask[x1 + 1]:
                x1 += 1
            runs.append((x, x1))
            x = x1 + 1

        new_runs = []
        for x0, x1 in runs:
            label = None
            # 8-connectivity: previous-row runs overlapping [x0-1, x1+1]
            for px0, px1, plabel in self.prev_runs:
                if px0 <= x1 + 1 and px1 >= x0 - 1:
                    label = plabel if label is None else self._union(label, plabel)
            if label is None:
                label = len(self.parent)
                self.parent.append(label)
                self.stats.append(
                    {
                        "area": 0,
                        "sw": 0.0,
                        "swx": 0.0,
                        "swy": 0.0,
                        "peak": -np.inf,
                        "x0": x0,
                        "x1": x1,
                        "y0": y,
                        "y1": y,
                    }
                )
            label = self._find(label)
            seg = values[x0 : x1 + 1].astype(np.float64)
            xs = np.arange(x0, x1 + 1, dtype=np.float64)
            st = self.stats[label]
            st["area"] += x1 - x0 + 1
            st["sw"] += seg.sum()
            st["swx"] += (seg * xs).sum()
            st["swy"] += seg.sum() * y
            st["peak"] = max(st["peak"], float(seg.max()))
            st["x0"] = min(st["x0"], x0)
            st["x1"] = max(st["x1"], x1)
            st["y0"] = min(st["y0"], y)
            st["y1"] = max(st["y1"], y)
            new_runs.append((x0, x1, label))
        self.prev_runs = [(x0, x1, self._find(lb)) for x0, x1, lb in new_runs]
        self.row += 1

    def finish(self) -> list[Detection]:
        roots = {}
        for i in range(len(self.parent)):
            r = self._find(i)
            if r not in roots:
                roots[r] = self.stats[r]
        detections = []
        for st in roots.values():
            if st["area"] < self.min_area_px:
                continue
            detections.append(
                Detection(
                    id="",
                    centroid=(st["swx"] / st["sw"], st["swy"] / st["sw"]),
                    peak_score=st["peak"],
                    area_px=st["area"],
                    bbox=(st["x0"], st["y0"], st["x1"], st["y1"]),
                    run_id=self.run_id,
                )
            )
        detections.sort(key=lambda d: (-d.peak_score, d.centroid[1], d.centroid[0]))
        for i, det in enumerate(detections):
            det.id = f"{self.run_id}-d{i:03d}" if self.run_id else f"d{i:03d}"
        return detections


def write_heatmap(heatmap: Heatmap, path) -> None:
    write_fph_array(heatmap.values, path, flags=FLAG_PROBABILITY)


def read_heatmap(path) -> Heatmap:
    arr, flags = read_fph_array(path)
    if flags != FLAG_PROBABILITY:
        raise ValueError(f"{path}: flags={flags}, expected probability data (flags=1)")
    return Heatmap(values=arr)


def heatmap_to_rgb(values: np.ndarray) -> np.ndarray:
    """Sequential gray-to-red ramp for probabilities; masked -> mid-gray.

    All intermediates stay float32 so gigapixel previews fit the budget.
    """
    mask = ~np.isfinite(values)
    v = np.where(mask, np.float32(0.0), values.astype(np.float32, copy=False))
    np.clip(v, 0.0, 1.0, out=v)
    r = np.round(64 + 191 * v).astype(np.uint8)
    g = np.round(64 * (np.float32(1.0) - v)).astype(np.uint8)
    rgb = np.stack([r, g, g.copy()], axis=-1)
    rgb[mask] = 128
    return rgb


def render_heatmap_png(heatmap: Heatmap | np.ndarray, path) -> None:
    values = heatmap.values if isinstance(heatmap, Heatmap) else heatmap
    Image.fromarray(heatmap_to_rgb(values), mode="RGB").save(path, format="PNG")
