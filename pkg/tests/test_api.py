import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from fringefinder import synthgen
from fringefinder.pipeline import RunConfig, init_data
from fringefinder.server import build_app
from fringefinder.tiler import PatchSpec

from conftest import SMALL_PATCH, small_hyper, small_model_config
from test_pipeline import SMALL_SPEC, write_scene


@pytest.fixture()
def service(tmp_path, small_dataset, small_trained_model):
    _, model_path = small_trained_model
    store = init_data(
        tmp_path / "data", small_dataset, model_path,
        small_model_config(), small_hyper(epochs=1),
    )
    img = tmp_path / "scene.fph"
    write_scene(img, seed=20, peak_fringes=4.0, atmo_std=0.35)
    entry = store.latest_model()
    record = store.detect(RunConfig(
        model_path=str(store.model_path(entry)),
        image_path=str(img),
        out_dir="",
        patch_spec=SMALL_SPEC,
        min_area_px=50,
        run_id="api-run-1",
    ))
    app = build_app(tmp_path / "data")
    client = TestClient(app)
    return client, store, record


class TestRunsApi:
    def test_list_runs(self, service):
        client, _, record = service
        resp = client.get("/api/runs")
        assert resp.status_code == 200
        runs = resp.json()["runs"]
        assert len(runs) == 1
        assert runs[0]["run_id"] == record.run_id
        assert runs[0]["model_version"] == 1

    def test_get_run_and_heatmap(self, service):
        client, _, record = service
        resp = client.get(f"/api/runs/{record.run_id}")
        assert resp.status_code == 200
        doc = resp.json()
        assert doc["counts"]["patches_total"] == doc["counts"]["patches_tested"] + \
            doc["counts"]["patches_skipped_by_edge_gate"]
        png = client.get(f"/api/runs/{record.run_id}/heatmap.png")
        assert png.status_code == 200
        assert png.headers["content-type"] == "image/png"

    def test_unknown_run_404(self, service):
        client, _, _ = service
        assert client.get("/api/runs/nope").status_code == 404
        assert client.get("/api/runs/nope/heatmap.png").status_code == 404


class TestDetectionsApi:
    def test_pending_filter_and_fields(self, service):
        client, _, record = service
        resp = client.get("/api/detections", params={"status": "pending"})
        assert resp.status_code == 200
        doc = resp.json()
        dets = doc["detections"]
        assert len(dets) == len(record.detections)
        for d in dets:
            assert d["status"] == "pending"
        scores = [d["peak_score"] for d in dets]
        assert scores == sorted(scores, reverse=True)
        assert "manifest" in doc

    def test_detail_and_images(self, service):
        client, _, record = service
        det_id = record.detections[0].id
        detail = client.get(f"/api/detections/{det_id}")
        assert detail.status_code == 200
        assert detail.json()["id"] == det_id
        patch = client.get(f"/api/detections/{det_id}/patch.png")
        assert patch.status_code == 200 and patch.headers["content-type"] == "image/png"
        ctx = client.get(f"/api/detections/{det_id}/context.png")
        assert ctx.status_code == 200 and ctx.headers["content-type"] == "image/png"

    def test_unknown_detection_404(self, service):
        client, _, _ = service
        assert client.get("/api/detections/nope").status_code == 404
        assert client.post("/api/detections/nope/label",
                           json={"verdict": "true_positive"}).status_code == 404


class TestLabeling:
    def test_label_roundtrip_read_your_writes(self, service):
        client, store, record = service
        det_id = record.detections[0].id
        resp = client.post(f"/api/detections/{det_id}/label",
                           json={"verdict": "false_positive"})
        assert resp.status_code == 200
        assert resp.json()["status"] == "false_positive"
        detail = client.get(f"/api/detections/{det_id}")
        assert detail.json()["status"] == "false_positive"
        records = synthgen.load_manifest(store.manifest_path)
        assert sum(1 for r in records if r.id == f"fb-{det_id}") == 1
        pending = client.get("/api/detections", params={"status": "pending"}).json()["detections"]
        assert det_id not in [d["id"] for d in pending]

    def test_double_label_conflict_409(self, service):
        client, _, record = service
        det_id = record.detections[0].id
        assert client.post(f"/api/detections/{det_id}/label",
                           json={"verdict": "true_positive"}).status_code == 200
        resp = client.post(f"/api/detections/{det_id}/label",
                           json={"verdict": "true_positive"})
        assert resp.status_code == 409

    def test_malformed_verdict_400(self, service):
        client, _, record = service
        det_id = record.detections[0].id
        assert client.post(f"/api/detections/{det_id}/label",
                           json={"verdict": "maybe"}).status_code == 400
        assert client.post(f"/api/detections/{det_id}/label",
                           content=b"not json").status_code == 400


class TestRetrainApi:
    def test_retrain_lifecycle_and_busy(self, service):
        client, store, _ = service
        store.train_delay_s = 1.5  # slowed training hook
        first = client.post("/api/retrain")
        assert first.status_code == 201
        job_id = first.json()["job_id"]

        second = client.post("/api/retrain")
        assert second.status_code == 409  # busy while the first is running

        status = client.get(f"/api/retrain/{job_id}").json()
        assert status["state"] == "running"

        deadline = time.time() + 60
        while time.time() < deadline:
            status = client.get(f"/api/retrain/{job_id}").json()
            if status["state"] != "running":
                break
            time.sleep(0.2)
        assert status["state"] == "done"
        assert status["model_version"] == 2

        models = client.get("/api/models").json()["models"]
        assert [m["version"] for m in models] == [1, 2]

    def test_unknown_job_404(self, service):
        client, _, _ = service
        assert client.get("/api/retrain/nope").status_code == 404


class TestStaticUi:
    def test_ui_assets_served_when_mounted(self, tmp_path, small_dataset,
                                           small_trained_model):
        _, model_path = small_trained_model
        init_data(tmp_path / "data", small_dataset, model_path,
                  small_model_config(), small_hyper(epochs=1))
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>review</body></html>")
        client = TestClient(build_app(tmp_path / "data", ui_dir=ui))
        resp = client.get("/")
        assert resp.status_code == 200
        assert "review" in resp.text
        # the API stays reachable next to the static mount
        assert client.get("/api/models").status_code == 200
