"""End-to-end detection runs, persistence, and the expert feedback loop.

detect_image streams the raster in row bands (band height = patch size,
advanced by the stride), gates each patch on edge strength, classifies
the survivors, and folds probabilities into the heatmap through a rolling
accumulator whose finalized rows are written straight to disk and fed to
a run-based blob extractor. Nothing ever holds the full raster or the
full heatmap, so peak memory stays within the configured budget no matter
how large the input is.

Expert labeling: only false positives feed back into the training
manifest (as label-0 patches of origin "feedback"); true positives change
detection status only. Retraining always starts from a fresh seeded
initialization of the same architecture and registers a new, immutable
model version.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import secrets
import struct
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import evalkit, nn
from .merger import Detection, HeatmapAccumulator, StreamingDetector, heatmap_to_rgb
from .raster import (
    FLAG_PHASE,
    FphWindowReader,
    payload_digest,
    phase_to_rgb,
    write_fph_array,
)
from .synthgen import SampleRecord, load_manifest, save_manifest
from .tiler import PatchSpec, edge_score, grid_positions


class NotFoundError(KeyError):
    pass


class ConflictError(RuntimeError):
    pass


class BusyError(RuntimeError):
    pass


def new_run_id() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return f"{stamp}-{secrets.token_hex(2)}"


@dataclass
class RunConfig:
    model_path: str
    image_path: str
    out_dir: str
    patch_spec: PatchSpec = field(default_factory=PatchSpec)
    sigma: float | None = None  # defaults to patch_size / 4
    detection_threshold: float = 0.5
    min_area_px: int = 100
    memory_budget_mib: int = 256
    preview_max_side: int = 1024
    run_id: str = ""

    def __post_init__(self):
        if not self.run_id:
            self.run_id = new_run_id()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_spec"] = asdict(self.patch_spec)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        if isinstance(d.get("patch_spec"), dict):
            d["patch_spec"] = PatchSpec(**d["patch_spec"])
        return RunConfig(**d)

    @staticmethod
    def from_json_file(path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            return RunConfig.from_dict(json.load(f))


@dataclass
class RunRecord:
    run_id: str
    config: dict
    raster_digest: int
    detections: list[Detection]
    model_version: int | None
    timings_ms: dict
    counts: dict
    backend: str = ""
    created_at: str = ""

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config": self.config,
            "raster_digest": self.raster_digest,
            "detections": [d.to_dict() for d in self.detections],
            "model_version": self.model_version,
            "timings_ms": self.timings_ms,
            "counts": self.counts,
            "backend": self.backend,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunRecord":
        return RunRecord(
            run_id=d["run_id"],
            config=d["config"],
            raster_digest=int(d["raster_digest"]),
            detections=[Detection.from_dict(x) for x in d["detections"]],
            model_version=d.get("model_version"),
            timings_ms=d.get("timings_ms", {}),
            counts=d.get("counts", {}),
            backend=d.get("backend", ""),
            created_at=d.get("created_at", ""),
        )


def _write_json_atomic(obj: dict, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
    os.replace(tmp, path)


def _estimate_band_bytes(width: int, patch_size: int) -> int:
    # raster band (f32) + num/den accumulators (f64 each)
    return width * patch_size * 4 + 2 * width * patch_size * 8


def detect_image(config: RunConfig, model: nn.Model | None = None) -> RunRecord:
    """Run the full pipeline on one raster; persists heatmap + detections.

    Raises before creating the output directory if the model or raster
    cannot be used or the memory budget cannot hold one processing band.
    """
    from . import kernels

    t0 = time.perf_counter()
    spec = config.patch_spec
    p = spec.patch_size
    if model is None:
        model = nn.load_model(config.model_path)
        if not isinstance(model, nn.Model):
            raise ValueError(f"{config.model_path}: not a CNN model file")
    reader = FphWindowReader(config.image_path)
    if reader.flags != FLAG_PHASE:
        raise ValueError(f"{config.image_path}: expected phase raster (flags=0)")
    width, height = reader.width, reader.height
    need = _estimate_band_bytes(width, p) + (32 << 20)
    budget = config.memory_budget_mib << 20
    if budget < need:
        raise ValueError(
            f"memory budget {config.memory_budget_mib} MiB cannot hold one processing band "
            f"({need >> 20} MiB needed for width {width}, patch {p})"
        )
    input_side = model.input_side or nn.infer_input_side(model, p)
    positions = grid_positions(width, height, spec)
    bands: dict[int, list[int]] = {}
    for x, y in positions:
        bands.setdefault(y, []).append(x)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = {"setup_ms": (time.perf_counter() - t0) * 1000.0}

    t1 = time.perf_counter()
    digest = payload_digest(config.image_path)
    timings["digest_ms"] = (time.perf_counter() - t1) * 1000.0

    t2 = time.perf_counter()
    acc = HeatmapAccumulator(width, height, p, config.sigma)
    detector = StreamingDetector(config.detection_threshold, config.min_area_px, config.run_id)
    decim = max(1, math.ceil(max(width, height) / config.preview_max_side))
    preview_rows: list[np.ndarray] = []
    tested = 0

    heatmap_path = out_dir / "heatmap.fph"
    tmp_heatmap = out_dir / "heatmap.fph.tmp"
    rows_written = 0

    def flush(rows: np.ndarray, f) -> None:
        nonlocal rows_written
        if rows.size == 0:
            return
        f.write(rows.astype("<f4").tobytes())
        for r in rows:
            detector.push_row(r)
        first = rows_written
        for i in range(rows.shape[0]):
            if (first + i) % decim == 0:
                preview_rows.append(rows[i, ::decim].copy())
        rows_written += rows.shape[0]

    with open(tmp_heatmap, "wb") as f:
        f.write(struct.pack("<4sIII", b"FPH1", width, height, 1))
        for y in sorted(bands):
            flush(acc.advance_to(y), f)
            band = reader.read_rows(y, y + p)
            gated: list[tuple[int, np.ndarray]] = []
            for x in bands[y]:
                window = band[:, x : x + p]
                if edge_score(window, spec) >= spec.edge_fraction_threshold:
                    gated.append((x, window))
            tested += len(gated)
            for start in range(0, len(gated), 64):
                chunk = gated[start : start + 64]
                enc = np.stack([nn.encode_patch(w, input_side) for _, w in chunk])
                probs = nn.predict_batch(model, enc)
                for (x, _), prob in zip(chunk, probs):
                    acc.add((x, y), float(np.clip(prob, 0.0, 1.0)))
        flush(acc.finish(), f)
    os.replace(tmp_heatmap, heatmap_path)
    timings["scan_ms"] = (time.perf_counter() - t2) * 1000.0

    t3 = time.perf_counter()
    detections = detector.finish()
    timings["extract_ms"] = (time.perf_counter() - t3) * 1000.0

    t4 = time.perf_counter()
    preview = np.vstack(preview_rows) if preview_rows else np.empty((0, 0), dtype=np.float32)
    # block-wise conversion keeps render temporaries small on big previews
    rgb = np.empty((*preview.shape, 3), dtype=np.uint8)
    for r0 in range(0, preview.shape[0], 256):
        rgb[r0 : r0 + 256] = heatmap_to_rgb(preview[r0 : r0 + 256])
    from PIL import Image

    Image.fromarray(rgb, mode="RGB").save(out_dir / "heatmap.png")
    timings["render_ms"] = (time.perf_counter() - t4) * 1000.0

    record = RunRecord(
        run_id=config.run_id,
        config=config.to_dict(),
        raster_digest=digest,
        detections=detections,
        model_version=None,
        timings_ms=timings,
        counts={
            "patches_total": len(positions),
            "patches_tested": tested,
            "patches_skipped_by_edge_gate": len(positions) - tested,
        },
        backend=kernels.ACTIVE_BACKEND,
        created_at=datetime.now(timezone.utc).isoformat(),
    )
    _write_json_atomic(config.to_dict(), out_dir / "config.json")
    _write_json_atomic(record.to_dict(), out_dir / "run.json")
    return record


# ---------------------------------------------------------------------------
# Data store: runs, manifest, model registry, feedback loop
# ---------------------------------------------------------------------------


@dataclass
class RegistryEntry:
    version: int
    path: str
    manifest_digest: str
    created_at: str
    eval_summary: float | None
    model_config: dict
    hyper: dict
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def _config_to_dict(config: nn.ModelConfig) -> dict:
    return {
        "input_side": config.input_side,
        "channels_in": config.channels_in,
        "layers": [list(s) for s in config.normalized_layers()],
        "seed": config.seed,
    }


def _config_from_dict(d: dict) -> nn.ModelConfig:
    return nn.ModelConfig(
        input_side=d["input_side"],
        channels_in=d["channels_in"],
        layers=tuple(tuple(s) for s in d["layers"]),
        seed=d["seed"],
    )


class DataStore:
    """All service state under one directory, every mutation atomic.

    Layout: manifest.jsonl, patches/, models/ (registry.json + v*.mnv1),
    runs/<run_id>/ (run.json, heatmap.fph, heatmap.png, config.json).
    """

    def __init__(self, data_dir):
        self.root = Path(data_dir)
        self.runs_dir = self.root / "runs"
        self.models_dir = self.root / "models"
        self.patches_dir = self.root / "patches"
        self.manifest_path = self.root / "manifest.jsonl"
        self.registry_path = self.models_dir / "registry.json"
        self._label_lock = threading.Lock()
        self._train_lock = threading.Lock()
        self.train_delay_s = float(os.environ.get("FRINGEFINDER_TRAIN_DELAY_S", "0") or 0)

    def initialize(self) -> None:
        for d in (self.runs_dir, self.models_dir, self.patches_dir):
            d.mkdir(parents=True, exist_ok=True)
        if not self.manifest_path.exists():
            save_manifest([], self.manifest_path)
        if not self.registry_path.exists():
            _write_json_atomic({"entries": []}, self.registry_path)

    # -- runs ---------------------------------------------------------------

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def list_runs(self) -> list[RunRecord]:
        out = []
        if not self.runs_dir.is_dir():
            return out
        for sub in sorted(self.runs_dir.iterdir()):
            f = sub / "run.json"
            if f.is_file():
                with open(f, encoding="utf-8") as fh:
                    out.append(RunRecord.from_dict(json.load(fh)))
        return out

    def get_run(self, run_id: str) -> RunRecord:
        f = self.run_dir(run_id) / "run.json"
        if not f.is_file():
            raise NotFoundError(f"unknown run {run_id!r}")
        with open(f, encoding="utf-8") as fh:
            return RunRecord.from_dict(json.load(fh))

    def save_run(self, record: RunRecord) -> None:
        _write_json_atomic(record.to_dict(), self.run_dir(record.run_id) / "run.json")

    def detect(self, config: RunConfig) -> RunRecord:
        config = replace(config, out_dir=str(self.run_dir(config.run_id)))
        record = detect_image(config)
        version = self._version_for_model_path(config.model_path)
        if version is not None:
            record.model_version = version
            self.save_run(record)
        return record

    # -- detections -----------------------------------------------------------

    def find_detection(self, detection_id: str) -> tuple[RunRecord, Detection]:
        for record in self.list_runs():
            for det in record.detections:
                if det.id == detection_id:
                    return record, det
        raise NotFoundError(f"unknown detection {detection_id!r}")

    def detections(self, status: str | None = None) -> list[Detection]:
        out = []
        for record in self.list_runs():
            for det in record.detections:
                if status is None or det.status == status:
                    out.append(det)
        out.sort(key=lambda d: -d.peak_score)
        return out

    def label_detection(self, detection_id: str, verdict: str, force: bool = False) -> Detection:
        """Set a verdict; a false positive appends one feedback negative.

        Idempotent per detection id: the manifest never gains a second
        record for the same detection, and relabeling without force is a
        conflict.
        """
        if verdict not in ("true_positive", "false_positive"):
            raise ValueError(f"verdict must be true_positive or false_positive, got {verdict!r}")
        with self._label_lock:
            record, det = self.find_detection(detection_id)
            if det.status != "pending" and not force:
                raise ConflictError(
                    f"detection {detection_id} already labeled {det.status}; use force to relabel"
                )
            det.status = verdict
            if verdict == "false_positive":
                self._append_feedback_patch(record, det)
            self.save_run(record)
            return det

    def _append_feedback_patch(self, record: RunRecord, det: Detection) -> None:
        rec_id = f"fb-{det.id}"
        records = load_manifest(self.manifest_path, resolve_paths=False)
        if any(r.id == rec_id for r in records):
            return
        config = RunConfig.from_dict(record.config)
        p = config.patch_spec.patch_size
        reader = FphWindowReader(config.image_path)
        cx, cy = det.centroid
        x0 = min(max(int(round(cx - p / 2.0)), 0), reader.width - p)
        y0 = min(max(int(round(cy - p / 2.0)), 0), reader.height - p)
        window = reader.read_rows(y0, y0 + p)[:, x0 : x0 + p]
        patch_path = self.patches_dir / f"{rec_id}.fph"
        write_fph_array(window, patch_path, flags=FLAG_PHASE)
        records.append(
            SampleRecord(
                id=rec_id,
                path=f"patches/{rec_id}.fph",
                label=0,
                origin="feedback",
                center=None,
                params=None,
                seed=0,
            )
        )
        save_manifest(records, self.manifest_path)

    # -- registry -------------------------------------------------------------

    def registry(self) -> list[RegistryEntry]:
        if not self.registry_path.is_file():
            return []
        with open(self.registry_path, encoding="utf-8") as f:
            doc = json.load(f)
        return [RegistryEntry(**e) for e in doc["entries"]]

    def _save_registry(self, entries: list[RegistryEntry]) -> None:
        _write_json_atomic({"entries": [e.to_dict() for e in entries]}, self.registry_path)

    def _version_for_model_path(self, model_path: str) -> int | None:
        target = Path(model_path).resolve()
        for e in self.registry():
            if (self.root / e.path).resolve() == target or Path(e.path).resolve() == target:
                return e.version
        return None

    def latest_model(self) -> RegistryEntry:
        entries = self.registry()
        if not entries:
            raise NotFoundError("model registry is empty; run init-data or retrain first")
        return max(entries, key=lambda e: e.version)

    def model_path(self, entry: RegistryEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def manifest_digest(self) -> str:
        h = hashlib.sha256()
        with open(self.manifest_path, "rb") as f:
            h.update(f.read())
        return h.hexdigest()

    def register_model(
        self,
        model: nn.Model,
        model_config: nn.ModelConfig,
        hyper: nn.Hyper,
        seed: int,
        eval_summary: float | None = None,
    ) -> RegistryEntry:
        entries = self.registry()
        version = max((e.version for e in entries), default=0) + 1
        rel = f"models/v{version}.mnv1"
        nn.save_model(model, self.root / rel)
        entry = RegistryEntry(
            version=version,
            path=rel,
            manifest_digest=self.manifest_digest(),
            created_at=datetime.now(timezone.utc).isoformat(),
            eval_summary=eval_summary,
            model_config=_config_to_dict(model_config),
            hyper=asdict(hyper),
            seed=seed,
        )
        entries.append(entry)
        self._save_registry(entries)
        return entry

    def retrain(self, hyper_overrides: dict | None = None) -> RegistryEntry:
        """Train a fresh model on the full current manifest, register next version.

        Holds the exclusive training lock; concurrent retrains get BusyError.
        """
        if not self._train_lock.acquire(blocking=False):
            raise BusyError("a retrain is already running")
        try:
            return self.retrain_locked(hyper_overrides)
        finally:
            self._train_lock.release()

    def retrain_locked(self, hyper_overrides: dict | None = None) -> RegistryEntry:
        """Retrain body; the caller must already hold the training lock."""
        base = self.latest_model()
        config = _config_from_dict(base.model_config)
        hyper_dict = dict(base.hyper)
        hyper_dict.update(hyper_overrides or {})
        hyper = nn.Hyper(**hyper_dict)
        records = load_manifest(self.manifest_path)
        labels = {r.label for r in records}
        if labels != {0, 1}:
            raise ValueError("manifest must contain both classes to retrain")
        version = max(e.version for e in self.registry()) + 1
        init_seed = base.seed + 1000 * version
        fresh_config = nn.ModelConfig(
            input_side=config.input_side,
            channels_in=config.channels_in,
            layers=config.layers,
            seed=init_seed,
        )
        if self.train_delay_s > 0:
            time.sleep(self.train_delay_s)
        model, _history = nn.train(fresh_config, hyper, records)
        return self.register_model(model, fresh_config, hyper, seed=init_seed)

    # -- crops for the review UI ----------------------------------------------

    def detection_patch_rgb(self, detection_id: str) -> np.ndarray:
        """Phase window around the detection, cyclic colormap."""
        record, det = self.find_detection(detection_id)
        config = RunConfig.from_dict(record.config)
        p = config.patch_spec.patch_size
        reader = FphWindowReader(config.image_path)
        cx, cy = det.centroid
        x0 = min(max(int(round(cx - p / 2.0)), 0), reader.width - p)
        y0 = min(max(int(round(cy - p / 2.0)), 0), reader.height - p)
        window = reader.read_rows(y0, y0 + p)[:, x0 : x0 + p]
        return phase_to_rgb(window)

    def detection_context_rgb(self, detection_id: str) -> np.ndarray:
        """Heatmap crop around the detection with its bounding box marked."""
        record, det = self.find_detection(detection_id)
        reader = FphWindowReader(self.run_dir(record.run_id) / "heatmap.fph")
        x0, y0, x1, y1 = det.bbox
        mx = max((x1 - x0 + 1), 32)
        my = max((y1 - y0 + 1), 32)
        cx0 = max(x0 - mx, 0)
        cy0 = max(y0 - my, 0)
        cx1 = min(x1 + mx, reader.width - 1)
        cy1 = min(y1 + my, reader.height - 1)
        crop = reader.read_rows(cy0, cy1 + 1)[:, cx0 : cx1 + 1]
        rgb = heatmap_to_rgb(crop)
        bx0, by0 = x0 - cx0, y0 - cy0
        bx1, by1 = x1 - cx0, y1 - cy0
        rgb[by0, bx0 : bx1 + 1] = (0, 80, 255)
        rgb[by1, bx0 : bx1 + 1] = (0, 80, 255)
        rgb[by0 : by1 + 1, bx0] = (0, 80, 255)
        rgb[by0 : by1 + 1, bx1] = (0, 80, 255)
        return rgb


def init_data(
    data_dir,
    manifest_path,
    model_path,
    model_config: nn.ModelConfig,
    hyper: nn.Hyper,
    eval_summary: float | None = None,
) -> DataStore:
    """Seed a service data directory from an existing manifest and model."""
    store = DataStore(data_dir)
    store.initialize()
    records = load_manifest(manifest_path)  # resolves to absolute paths
    save_manifest(records, store.manifest_path)
    model = nn.load_model(model_path)
    if not isinstance(model, nn.Model):
        raise ValueError(f"{model_path}: not a CNN model file")
    store.register_model(model, model_config, hyper, seed=model_config.seed, eval_summary=eval_summary)
    return store


def evaluate_manifest(
    manifest_path,
    configs: dict[str, nn.ModelConfig | str],
    hyper: nn.Hyper,
    k: int = 2,
    seed: int = 0,
    report_path=None,
    plot_path=None,
) -> evalkit.CvReport:
    records = load_manifest(manifest_path)
    report = evalkit.cross_validate(records, configs, hyper, k=k, seed=seed)
    if report_path:
        evalkit.save_report(report, report_path)
    if plot_path:
        evalkit.plot_report(report, plot_path)
    return report
