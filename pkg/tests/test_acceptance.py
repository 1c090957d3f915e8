"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The heavyweight fixtures
(default synthetic dataset, 2-fold CV, fully trained model) are module
scoped and shared across criteria. Everything here exercises the library
end to end at its stated tolerances; nothing is mocked.
"""

import json
import math
import os
import subprocess
import sys
import textwrap
import time
from pathlib import Path

import numpy as np
import pytest

from fringefinder import evalkit, nn, synthgen
from fringefinder.merger import Heatmap, extract_detections, merge
from fringefinder.pipeline import RunConfig, detect_image, init_data
from fringefinder.raster import (
    PhaseRaster,
    phase_gradient,
    read_raster,
    wrap_phase,
    wrap_to_f32,
    write_raster,
)
from fringefinder.tiler import PatchSpec, grid_count, grid_positions

import gradcheck
from reference import concordance_auc, naive_merge, naive_wrapped_gradient

pytestmark = pytest.mark.acceptance

PASS = "ACCEPTANCE PASS"


# ---------------------------------------------------------------------------
# shared heavyweight fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def default_dataset(work):
    """The seeded default dataset: 2000 patches at 224 px, half positive."""
    t0 = time.perf_counter()
    manifest = synthgen.build_dataset(work / "dataset", count=2000, positive_fraction=0.5,
                                      size=224, master_seed=0)
    return manifest, time.perf_counter() - t0


@pytest.fixture(scope="module")
def cv_outcome(default_dataset):
    manifest, gen_elapsed = default_dataset
    records = synthgen.load_manifest(manifest)
    t0 = time.perf_counter()
    report = evalkit.cross_validate(
        records,
        {"cnn-default": nn.ModelConfig(), "svm": "svm"},
        nn.Hyper(),
        k=2,
        seed=0,
        min_tnr=0.95,
    )
    return report, gen_elapsed, time.perf_counter() - t0


@pytest.fixture(scope="module")
def full_model(work, default_dataset):
    """Default config trained on the full dataset; used by the detection
    and streaming criteria."""
    manifest, _ = default_dataset
    records = synthgen.load_manifest(manifest)
    model, _history = nn.train(nn.ModelConfig(), nn.Hyper(), records)
    path = work / "model.mnv1"
    nn.save_model(model, path)
    return model, path


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_gradient_verification():
    """Every layer type in isolation and the composed default network pass
    central finite differences (float64, eps=1e-3, rel err < 1e-5) in
    under a minute."""
    t0 = time.perf_counter()
    summary = gradcheck.run_full_verification()
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"gradient verification took {elapsed:.1f}s"
    assert summary["composed_default_sampled"] >= 100
    assert summary["default_first_layer_constant"] == 408
    print(f"{PASS} [gradient-verification] {summary} in {elapsed:.1f}s")


def test_desk_scale_learning(cv_outcome):
    """2-fold stratified CV on the default synthetic dataset: CNN mean AUC
    >= 0.95 with a TPR >= 0.85 @ TNR >= 0.95 operating point per fold,
    CNN beating the SVM baseline, inside 15 minutes total."""
    report, gen_elapsed, cv_elapsed = cv_outcome
    total = gen_elapsed + cv_elapsed
    assert total < 900.0, f"dataset+CV took {total:.0f}s"

    cnn_mean = report.mean_auc("cnn-default")
    svm_mean = report.mean_auc("svm")
    assert cnn_mean >= 0.95, f"CNN mean AUC {cnn_mean:.4f} < 0.95"
    assert cnn_mean > svm_mean, f"CNN {cnn_mean:.4f} does not beat SVM {svm_mean:.4f}"
    for r in report.results:
        if r.config_name != "cnn-default":
            continue
        op = evalkit.operating_point(r.curve, min_tnr=0.95)
        assert op.tnr >= 0.95 and op.tpr >= 0.85, (
            f"fold {r.fold}: no operating point with TPR>=0.85 at TNR>=0.95 "
            f"(got tpr={op.tpr:.3f} tnr={op.tnr:.3f})"
        )
    print(
        f"{PASS} [desk-scale-learning] cnn mean AUC {cnn_mean:.4f} > svm {svm_mean:.4f}, "
        f"runtime {total:.0f}s"
    )


def test_roc_oracle_equivalence():
    """Sweep AUC equals brute-force pairwise concordance (ties 0.5) within
    1e-9 on 100 random score sets, n <= 500."""
    worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(10, 501))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        scores = np.round(rng.uniform(size=n), 2)  # coarse grid forces ties
        auc = evalkit.roc(scores, labels).auc
        want = concordance_auc(scores, labels)
        worst = max(worst, abs(auc - want))
        assert abs(auc - want) < 1e-9
    print(f"{PASS} [roc-oracle] 100 sets, worst |sweep - concordance| = {worst:.2e}")


def test_merge_oracle_equivalence():
    """Gaussian merge matches brute-force accumulation within 1e-5 on 50
    random layouts; constant-probability layouts are constant to 1e-6."""
    p = 24
    worst = 0.0
    for trial in range(50):
        rng = np.random.default_rng(100 + trial)
        dims = (int(rng.integers(p, 160)), int(rng.integers(p, 160)))
        n_patches = int(rng.integers(1, 16))
        probs = [
            (
                (int(rng.integers(0, dims[0] - p + 1)), int(rng.integers(0, dims[1] - p + 1))),
                float(rng.uniform()),
            )
            for _ in range(n_patches)
        ]
        got = merge(probs, dims=dims, patch_size=p, sigma=p / 4).values
        want = naive_merge(probs, dims, p, p / 4)
        assert np.array_equal(np.isnan(got), np.isnan(want))
        ok = ~np.isnan(want)
        diff = float(np.abs(got[ok] - want[ok]).max()) if ok.any() else 0.0
        worst = max(worst, diff)
        assert diff < 1e-5

    for const in (0.0, 0.37, 1.0):
        probs = [((x, y), const) for x in (0, 12, 24) for y in (0, 12, 24)]
        got = merge(probs, dims=(48, 48), patch_size=p).values
        covered = ~np.isnan(got)
        assert np.abs(got[covered] - const).max() < 1e-6
    print(f"{PASS} [merge-oracle] 50 layouts, worst diff {worst:.2e}; constant layouts exact")


def test_tiling_arithmetic_and_coverage():
    """grid_positions matches the closed-form rule on 200 cases including
    non-divisible extents; union coverage and >=4-fold interior overlap."""
    spec = PatchSpec()

    def closed_form(extent):
        last = extent - 224
        pos = list(range(0, last + 1, 112))
        if pos[-1] != last:
            pos.append(last)
        return pos

    rng = np.random.default_rng(7)
    for trial in range(200):
        width = int(rng.integers(224, 3000))
        height = int(rng.integers(224, 3000))
        got = grid_positions(width, height, spec)
        xs, ys = closed_form(width), closed_form(height)
        assert got == [(x, y) for y in ys for x in xs]
        assert grid_count(width, height, spec) == len(xs) * len(ys)
        for extent, axis in ((width, xs), (height, ys)):
            covered = np.zeros(extent, dtype=bool)
            for p0 in axis:
                covered[p0 : p0 + 224] = True
            assert covered.all(), f"axis of {extent} not covered"

    counts = np.zeros((700, 700), dtype=np.int16)
    for x, y in grid_positions(700, 700, spec):
        counts[y : y + 224, x : x + 224] += 1
    assert counts[224:-224, 224:-224].min() >= 4
    print(f"{PASS} [tiling] 200-case closed-form sweep, coverage, >=4 interior overlap")


@pytest.mark.slow
def test_gigapixel_streaming(work, full_model):
    """detect_image on a 19500x19700 synthetic raster finishes under the
    256 MiB budget with patches_total equal to the closed form, < 30 min.

    The detect child runs under the numpy kernel backend: the JIT runtime
    of the numba backend alone holds ~110 MiB resident, which is exactly
    the deployment case the env-selectable fallback exists for. Memory is
    read from the child's own getrusage high-water mark; the child is
    spawned from a tiny driver so no fat parent pages pollute the number.
    """
    _, model_path = full_model
    width, height = 19500, 19700
    big = work / "big.fph"
    run_dir = work / "bigrun"
    try:
        t0 = time.perf_counter()
        rng = np.random.default_rng(99)
        dv = synthgen.delta_volume_for_peak_phase(10 * math.pi, 5000.0)
        sources = [
            synthgen.MogiParams(
                center_x=float(rng.uniform(0.1, 0.9) * width),
                center_y=float(rng.uniform(0.1, 0.9) * height),
                depth_m=5000.0,
                delta_volume_m3=dv * float(rng.choice([-1.0, 1.0])),
            )
            for _ in range(6)
        ]
        synthgen.write_large_interferogram(big, width, height, sources, seed=99)
        gen_elapsed = time.perf_counter() - t0

        driver = work / "rss_driver.py"
        driver.write_text(textwrap.dedent("""
            import json, resource, subprocess, sys
            code = '''
            import json, resource, sys
            from fringefinder.pipeline import RunConfig, detect_image
            rec = detect_image(RunConfig(model_path=sys.argv[1], image_path=sys.argv[2],
                                         out_dir=sys.argv[3], run_id="gigapixel"))
            print(json.dumps({
                "counts": rec.counts,
                "n_detections": len(rec.detections),
                "rss_kib": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss,
            }))
            '''
            out = subprocess.run([sys.executable, "-c", code] + sys.argv[1:],
                                 capture_output=True, text=True)
            sys.stdout.write(out.stdout)
            sys.stderr.write(out.stderr)
            sys.exit(out.returncode)
        """))
        env = dict(os.environ, FRINGEFINDER_BACKEND="numpy")
        t0 = time.perf_counter()
        proc = subprocess.run(
            [sys.executable, str(driver), str(model_path), str(big), str(run_dir)],
            env=env, capture_output=True, text=True, timeout=1800,
        )
        detect_elapsed = time.perf_counter() - t0
        assert proc.returncode == 0, proc.stderr[-2000:]
        doc = json.loads(proc.stdout.strip().splitlines()[-1])

        expected = grid_count(width, height, PatchSpec())
        assert doc["counts"]["patches_total"] == expected
        assert (
            doc["counts"]["patches_tested"] + doc["counts"]["patches_skipped_by_edge_gate"]
            == expected
        )
        assert doc["n_detections"] >= 1
        rss_mib = doc["rss_kib"] / 1024.0
        assert rss_mib < 256.0, f"peak RSS {rss_mib:.0f} MiB over budget"
        assert gen_elapsed + detect_elapsed < 1800.0
        print(
            f"{PASS} [gigapixel-streaming] {expected} patches, "
            f"{doc['counts']['patches_tested']} tested, {doc['n_detections']} detections, "
            f"peak RSS {rss_mib:.0f} MiB, gen {gen_elapsed:.0f}s + detect {detect_elapsed:.0f}s"
        )
    finally:
        for leftover in (big, run_dir / "heatmap.fph"):
            if leftover.exists():
                leftover.unlink()


@pytest.mark.slow
def test_end_to_end_localization(work, full_model):
    """Five seeded 672x672 scenes with one >=3-fringe source and atmosphere
    std 0.5: exactly one detection each, median centroid error <= 56 px."""
    _, model_path = full_model
    errors = []
    for seed in range(5):
        raster, mogi = synthgen.scene_with_source(
            seed, width=672, height=672, peak_fringes=5.0, atmo_std_rad=0.5, depth_m=5000.0
        )
        img = work / f"scene{seed}.fph"
        write_raster(raster, img)
        record = detect_image(RunConfig(
            model_path=str(model_path), image_path=str(img),
            out_dir=str(work / f"scenerun{seed}"), run_id=f"scene-{seed}",
        ))
        assert len(record.detections) == 1, (
            f"seed {seed}: expected exactly one detection, got {len(record.detections)}"
        )
        d = record.detections[0]
        errors.append(float(np.hypot(d.centroid[0] - mogi.center_x,
                                     d.centroid[1] - mogi.center_y)))
    median = float(np.median(errors))
    assert median <= 56.0, f"median centroid error {median:.1f}px > 56px ({errors})"
    print(f"{PASS} [localization] errors {[f'{e:.0f}' for e in errors]} px, median {median:.0f}")


FEEDBACK_LAYERS = (
    ("conv", 6, 3), ("relu",), ("maxpool", 2),
    ("conv", 12, 3), ("relu",), ("maxpool", 2),
    ("flatten",), ("dense", 24), ("relu",), ("dense", 2), ("softmax",),
)
FEEDBACK_SPEC = PatchSpec(patch_size=64, stride=32, augment_max_shift=16)


def _feedback_scenario(base_dir, seed):
    """One full expert-loop repetition at 64-px geometry: train a base
    model, label 200 constructed texture false positives through the real
    labeling path, retrain, then measure held-out FP counts and TPR."""
    beta, std = 1.5, 1.8
    config = nn.ModelConfig(input_side=16, channels_in=2, layers=FEEDBACK_LAYERS, seed=seed)
    hyper = nn.Hyper(learning_rate=0.02, epochs=8, batch_size=16, seed=seed)

    manifest = synthgen.build_dataset(base_dir / "ds", count=300, positive_fraction=0.5,
                                      size=64, master_seed=1000 + seed)
    records = synthgen.load_manifest(manifest)
    model, _ = nn.train(config, hyper, records)
    base_model_path = base_dir / "base.mnv1"
    nn.save_model(model, base_model_path)
    store = init_data(base_dir / "data", manifest, base_model_path, config, hyper)
    e1 = store.latest_model()

    def texture_raster(tag, s):
        f = synthgen.turbulent_atmosphere(
            synthgen.AtmosphereParams(std_rad=std, beta=beta, seed=s), 448, 448)
        path = base_dir / f"{tag}{s}.fph"
        write_raster(PhaseRaster(values=wrap_to_f32(f)), path)
        return path

    def scene_raster(s):
        rng = np.random.default_rng(np.random.SeedSequence((424242, seed, s)))
        cx, cy = float(rng.uniform(150, 300)), float(rng.uniform(150, 300))
        dv = synthgen.delta_volume_for_peak_phase(5 * 2 * np.pi, 1200.0)
        mogi = synthgen.MogiParams(center_x=cx, center_y=cy, depth_m=1200.0,
                                   delta_volume_m3=dv)
        atmo = synthgen.AtmosphereParams(std_rad=0.4, beta=2.7,
                                         seed=int(rng.integers(0, 2**63)))
        raster, _ = synthgen.make_interferogram(mogi, atmo, 448, 448)
        path = base_dir / f"scene{s}.fph"
        write_raster(raster, path)
        return path, (cx, cy)

    def run(entry, image, rid):
        return store.detect(RunConfig(
            model_path=str(store.model_path(entry)), image_path=str(image), out_dir="",
            patch_spec=FEEDBACK_SPEC, min_area_px=50, run_id=rid,
        ))

    n_fb, idx = 0, 0
    while n_fb < 200 and idx < 80:
        rec = run(e1, texture_raster("t", 10_000 * seed + idx), f"fb-{idx}")
        for det in rec.detections:
            if n_fb >= 200:
                break
            store.label_detection(det.id, "false_positive")
            n_fb += 1
        idx += 1
    assert n_fb == 200, f"collected only {n_fb} feedback labels"
    e2 = store.retrain()
    assert e2.version == e1.version + 1

    fp_before = fp_after = 0
    for s in range(12):
        img = texture_raster("h", 900_000 + 100 * seed + s)
        fp_before += len(run(e1, img, f"hb-{s}").detections)
        fp_after += len(run(e2, img, f"ha-{s}").detections)

    tp_before = tp_after = 0
    n_scenes = 16
    for s in range(n_scenes):
        img, center = scene_raster(s)

        def hit(rec):
            return any(
                np.hypot(d.centroid[0] - center[0], d.centroid[1] - center[1]) <= 64
                for d in rec.detections
            )

        tp_before += hit(run(e1, img, f"sb-{s}"))
        tp_after += hit(run(e2, img, f"sa-{s}"))

    assert fp_before > 0, "texture produced no false positives to begin with"
    drop = (1.0 - fp_after / fp_before) * 100.0
    tpr_degradation = (tp_before - tp_after) / n_scenes * 100.0
    return drop, tpr_degradation, fp_before, fp_after


@pytest.mark.slow
def test_feedback_loop_efficacy(tmp_path):
    """Labeling 200 constructed false positives of one atmospheric texture
    and retraining cuts held-out FP detections by >= 20% (median over 5
    seeds) while scene TPR degrades <= 5 points."""
    drops, degradations, details = [], [], []
    for seed in range(5):
        d, t, fb, fa = _feedback_scenario(tmp_path / f"seed{seed}", seed)
        drops.append(d)
        degradations.append(t)
        details.append(f"seed{seed}: {fb}->{fa} FPs ({d:.0f}%), dTPR {t:.1f}pts")
    median_drop = float(np.median(drops))
    median_degradation = float(np.median(degradations))
    assert median_drop >= 20.0, f"median FP drop {median_drop:.0f}% < 20% ({details})"
    assert median_degradation <= 5.0, (
        f"median TPR degradation {median_degradation:.1f}pts > 5 ({details})"
    )
    print(f"{PASS} [feedback-loop] median drop {median_drop:.0f}%, "
          f"median TPR degradation {median_degradation:.1f}pts; {details}")


def test_phase_algebra_and_roundtrips(work):
    """Wrap idempotence, 2pi periodicity at 1e-6, wrap-invariant ramp
    gradients, and bit-exact FPH1/MNV1 round-trips."""
    rng = np.random.default_rng(0)
    xs = rng.uniform(-60, 60, size=5000)
    for x in xs:
        w = wrap_phase(float(x))
        assert wrap_phase(w) == w
        assert -math.pi < w <= math.pi
    for x in rng.uniform(-math.pi + 1e-9, math.pi, size=500):
        for k in range(-10, 11):
            assert abs(wrap_phase(float(x + 2 * math.pi * k)) - wrap_phase(float(x))) < 1e-6

    base = rng.uniform(-3, 3, size=(24, 24))
    ga = phase_gradient(PhaseRaster(values=wrap_to_f32(base))).magnitude
    gb = phase_gradient(PhaseRaster(values=wrap_to_f32(base + 2.4))).magnitude
    assert np.abs(ga - gb).max() < 1e-6
    ramp = wrap_to_f32(np.tile(np.arange(64) * 0.4, (16, 1)))
    gm = phase_gradient(PhaseRaster(values=ramp)).magnitude
    assert np.abs(gm - 0.4).max() < 1e-5
    ref = naive_wrapped_gradient(ramp.astype(np.float64))
    assert np.abs(gm - ref).max() < 1e-6

    values = wrap_to_f32(rng.uniform(-9, 9, size=(31, 17)))
    values[3, 4] = np.nan
    fph = work / "algebra.fph"
    write_raster(PhaseRaster(values=values), fph)
    back = read_raster(fph)
    assert back.values.tobytes() == values.tobytes()

    model = nn.build_model(nn.ModelConfig(
        input_side=12, channels_in=2,
        layers=(("conv", 3, 3), ("relu",), ("maxpool", 2), ("flatten",),
                ("dense", 2), ("softmax",)),
        seed=3,
    ))
    m1 = work / "algebra1.mnv1"
    m2 = work / "algebra2.mnv1"
    nn.save_model(model, m1)
    nn.save_model(nn.load_model(m1), m2)
    assert m1.read_bytes() == m2.read_bytes()
    print(f"{PASS} [phase-algebra] wrap/gradient properties and both round-trips bit-exact")
