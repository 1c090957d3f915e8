"""HTTP API hosting the review loop: runs, detections, labeling, retraining.

All state lives in the DataStore; the server is a thin JSON layer over it
plus PNG crops for the triage UI. Retraining runs on a background thread
under the store's exclusive lock; a second trigger while one is running
answers 409.
"""

from __future__ import annotations

import io
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image

from .pipeline import BusyError, ConflictError, DataStore, NotFoundError


def _png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


class RetrainJobs:
    def __init__(self):
        self._jobs: dict[str, dict] = {}
        self._lock = threading.Lock()

    def start(self, store: DataStore, overrides: dict | None) -> str:
        # take the training lock here so a second POST sees busy immediately;
        # the worker thread inherits and releases it
        if not store._train_lock.acquire(blocking=False):
            raise BusyError("a retrain is already running")
        job_id = uuid.uuid4().hex[:12]
        with self._lock:
            self._jobs[job_id] = {"state": "running", "model_version": None, "error": None}

        def work():
            try:
                entry = store.retrain_locked(overrides)
                with self._lock:
                    self._jobs[job_id].update(state="done", model_version=entry.version)
            except Exception as exc:  # surfaced through the job state
                with self._lock:
                    self._jobs[job_id].update(state="failed", error=str(exc))
            finally:
                store._train_lock.release()

        threading.Thread(target=work, daemon=True).start()
        return job_id

    def get(self, job_id: str) -> dict:
        with self._lock:
            if job_id not in self._jobs:
                raise NotFoundError(f"unknown retrain job {job_id!r}")
            return dict(self._jobs[job_id])


def build_app(data_dir, ui_dir=None) -> FastAPI:
    store = DataStore(data_dir)
    store.initialize()
    jobs = RetrainJobs()
    app = FastAPI(title="fringefinder review service")
    app.state.store = store
    app.state.jobs = jobs

    @app.exception_handler(NotFoundError)
    async def _not_found(request: Request, exc: NotFoundError):
        return JSONResponse({"error": str(exc)}, status_code=404)

    @app.exception_handler(ConflictError)
    async def _conflict(request: Request, exc: ConflictError):
        return JSONResponse({"error": str(exc)}, status_code=409)

    @app.exception_handler(BusyError)
    async def _busy(request: Request, exc: BusyError):
        return JSONResponse({"error": str(exc)}, status_code=409)

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse({"error": str(exc)}, status_code=400)

    @app.get("/api/runs")
    def list_runs():
        runs = store.list_runs()
        return {
            "runs": [
                {
                    "run_id": r.run_id,
                    "created_at": r.created_at,
                    "counts": r.counts,
                    "model_version": r.model_version,
                    "n_detections": len(r.detections),
                    "n_pending": sum(1 for d in r.detections if d.status == "pending"),
                }
                for r in runs
            ]
        }

    @app.get("/api/runs/{run_id}")
    def get_run(run_id: str):
        return store.get_run(run_id).to_dict()

    @app.get("/api/runs/{run_id}/heatmap.png")
    def run_heatmap(run_id: str):
        path = store.run_dir(run_id) / "heatmap.png"
        if not path.is_file():
            raise NotFoundError(f"no heatmap for run {run_id!r}")
        return FileResponse(path, media_type="image/png")

    @app.get("/api/detections")
    def list_detections(status: str | None = None):
        manifest_counts = {"total": 0, "feedback": 0}
        try:
            from .synthgen import load_manifest

            records = load_manifest(store.manifest_path, resolve_paths=False)
            manifest_counts = {
                "total": len(records),
                "feedback": sum(1 for r in records if r.origin == "feedback"),
            }
        except FileNotFoundError:
            pass
        return {
            "detections": [d.to_dict() for d in store.detections(status)],
            "manifest": manifest_counts,
        }

    @app.get("/api/detections/{detection_id}")
    def get_detection(detection_id: str):
        _, det = store.find_detection(detection_id)
        return det.to_dict()

    @app.get("/api/detections/{detection_id}/patch.png")
    def detection_patch(detection_id: str):
        return Response(_png_bytes(store.detection_patch_rgb(detection_id)), media_type="image/png")

    @app.get("/api/detections/{detection_id}/context.png")
    def detection_context(detection_id: str):
        return Response(
            _png_bytes(store.detection_context_rgb(detection_id)), media_type="image/png"
        )

    @app.post("/api/detections/{detection_id}/label")
    async def label_detection(detection_id: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        verdict = body.get("verdict") if isinstance(body, dict) else None
        if verdict not in ("true_positive", "false_positive"):
            return JSONResponse(
                {"error": "verdict must be true_positive or false_positive"}, status_code=400
            )
        det = store.label_detection(detection_id, verdict, force=bool(body.get("force")))
        return JSONResponse(det.to_dict(), status_code=200)

    @app.post("/api/retrain")
    async def trigger_retrain(request: Request):
        overrides = None
        body = await request.body()
        if body:
            import json as _json

            try:
                overrides = _json.loads(body)
            except ValueError:
                return JSONResponse({"error": "body must be JSON"}, status_code=400)
        job_id = jobs.start(store, overrides)
        return JSONResponse({"job_id": job_id}, status_code=201)

    @app.get("/api/retrain/{job_id}")
    def retrain_status(job_id: str):
        return jobs.get(job_id)

    @app.get("/api/models")
    def list_models():
        return {"models": [e.to_dict() for e in store.registry()]}

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(port: int, data_dir, ui_dir=None) -> None:
    """Run the review service until interrupted."""
    import uvicorn

    if ui_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        ui_dir = candidate if candidate.is_dir() else None
    app = build_app(data_dir, ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
