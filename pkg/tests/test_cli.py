import json
import subprocess
import sys

import pytest

from fringefinder.cli import main

from conftest import SMALL_PATCH


def run_cli(*args):
    return main(list(args))


class TestExitCodes:
    def test_usage_error_exits_1(self):
        proc = subprocess.run(
            [sys.executable, "-m", "fringefinder.cli", "detect"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1

    def test_unknown_command_exits_1(self):
        proc = subprocess.run(
            [sys.executable, "-m", "fringefinder.cli", "frobnicate"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1

    def test_runtime_error_exits_2(self, tmp_path, capsys):
        code = run_cli("train", "--manifest", str(tmp_path / "missing.jsonl"),
                       "--out", str(tmp_path / "m.mnv1"))
        assert code == 2


class TestGenDataset:
    def test_generates_manifest_and_rasters(self, tmp_path, capsys):
        code = run_cli("gen-dataset", "--out", str(tmp_path / "ds"), "--count", "4",
                       "--positive-fraction", "0.5", "--seed", "3", "--size", "48")
        assert code == 0
        assert (tmp_path / "ds" / "manifest.jsonl").is_file()
        assert len(list((tmp_path / "ds" / "rasters").glob("*.fph"))) == 4


class TestGenRaster:
    def test_scene(self, tmp_path, capsys):
        out = tmp_path / "scene.fph"
        code = run_cli("gen-raster", "--out", str(out), "--width", "256",
                       "--height", "256", "--seed", "4")
        assert code == 0 and out.is_file()

    def test_streamed(self, tmp_path, capsys):
        out = tmp_path / "big.fph"
        code = run_cli("gen-raster", "--out", str(out), "--width", "300",
                       "--height", "200", "--seed", "4", "--streamed")
        assert code == 0 and out.stat().st_size == 16 + 300 * 200 * 4


class TestEndToEndSmall:
    def test_train_detect_eval_roundtrip(self, tmp_path, small_dataset,
                                         small_trained_model, capsys):
        _, model_path = small_trained_model
        scene = tmp_path / "scene.fph"
        assert run_cli("gen-raster", "--out", str(scene), "--width", "256",
                       "--height", "256", "--seed", "9", "--atmo-std", "0.4") == 0

        run_dir = tmp_path / "run"
        config = {
            "model_path": str(model_path),
            "image_path": str(scene),
            "out_dir": str(run_dir),
            "patch_spec": {
                "patch_size": SMALL_PATCH,
                "stride": SMALL_PATCH // 2,
                "augment_max_shift": SMALL_PATCH // 4,
            },
            "min_area_px": 50,
            "run_id": "cli-run",
        }
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps(config))
        assert run_cli("detect", "--model", str(model_path), "--image", str(scene),
                       "--out", str(run_dir), "--config", str(cfg)) == 0
        assert (run_dir / "run.json").is_file()
        out = capsys.readouterr().out
        assert "patches tested" in out

    def test_eval_writes_report_and_plot(self, tmp_path, small_dataset, capsys):
        report = tmp_path / "report.json"
        # svm-only keeps this CLI path fast; the CNN path is covered elsewhere
        code = run_cli("eval", "--manifest", str(small_dataset), "--folds", "2",
                       "--seed", "1", "--configs", "svm", "--out", str(report))
        assert code == 0
        doc = json.loads(report.read_text())
        assert {e["config_name"] for e in doc["entries"]} == {"svm"}
        assert (tmp_path / "report.png").is_file()

    def test_unknown_eval_config_exits_2(self, tmp_path, small_dataset, capsys):
        code = run_cli("eval", "--manifest", str(small_dataset), "--out",
                       str(tmp_path / "r.json"), "--configs", "no-such-model")
        assert code == 2
