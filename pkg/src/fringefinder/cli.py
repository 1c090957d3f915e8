"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _model_configs(names: str):
    from . import nn

    known = {
        "cnn-default": nn.ModelConfig(),
        "cnn-small": nn.ModelConfig(
            layers=(
                ("conv", 8, 5),
                ("relu",),
                ("maxpool", 2),
                ("conv", 16, 3),
                ("relu",),
                ("maxpool", 2),
                ("flatten",),
                ("dense", 32),
                ("relu",),
                ("dense", 2),
                ("softmax",),
            )
        ),
        "svm": "svm",
    }
    out = {}
    for name in names.split(","):
        name = name.strip()
        if not name:
            continue
        if name not in known:
            raise ValueError(f"unknown config {name!r}; choose from {sorted(known)}")
        out[name] = known[name]
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fringefinder", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="generate a labeled synthetic patch dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--positive-fraction", type=float, default=0.5)
    g.add_argument("--size", type=int, default=224)
    g.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("gen-raster", help="generate a synthetic scene raster")
    r.add_argument("--out", required=True)
    r.add_argument("--width", type=int, default=672)
    r.add_argument("--height", type=int, default=672)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--sources", type=int, default=1, help="number of deformation sources")
    r.add_argument("--peak-fringes", type=float, default=3.0)
    r.add_argument("--atmo-std", type=float, default=0.5)
    r.add_argument("--streamed", action="store_true",
                   help="closed-form streaming writer for very large rasters (no FFT atmosphere)")

    t = sub.add_parser("train", help="train the CNN on a dataset manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("detect", help="run detection on one raster")
    d.add_argument("--model", required=True)
    d.add_argument("--image", required=True)
    d.add_argument("--out", required=True, help="run directory to create")
    d.add_argument("--threshold", type=float, default=0.5)
    d.add_argument("--sigma", type=float, default=None)
    d.add_argument("--budget-mib", type=int, default=256)
    d.add_argument("--min-area", type=int, default=100)
    d.add_argument("--config", default=None, help="JSON file mirroring RunConfig fields")
    d.add_argument("--run-id", default=None)

    e = sub.add_parser("eval", help="k-fold cross-validation comparison report")
    e.add_argument("--manifest", required=True)
    e.add_argument("--folds", type=int, default=2)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--configs", default="cnn-default,svm")
    e.add_argument("--out", required=True, help="report JSON path (plot saved alongside)")
    e.add_argument("--epochs", type=int, default=20)

    s = sub.add_parser("serve", help="run the review HTTP service")
    s.add_argument("--port", type=int, default=8650)
    s.add_argument("--data", required=True)
    s.add_argument("--ui", default=None, help="directory of built UI assets")

    rt = sub.add_parser("retrain", help="retrain on the current manifest (feedback included)")
    rt.add_argument("--data", required=True)

    i = sub.add_parser("init-data", help="seed a service data dir from a manifest + model")
    i.add_argument("--data", required=True)
    i.add_argument("--manifest", required=True)
    i.add_argument("--model", required=True)
    i.add_argument("--seed", type=int, default=0)
    return parser


def run(args) -> int:
    from . import nn, pipeline, synthgen

    if args.command == "gen-dataset":
        manifest = synthgen.build_dataset(
            args.out,
            count=args.count,
            positive_fraction=args.positive_fraction,
            size=args.size,
            master_seed=args.seed,
        )
        print(f"wrote {manifest}")

    elif args.command == "gen-raster":
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        if args.streamed:
            import numpy as np

            rng = np.random.default_rng(args.seed)
            sources = []
            for _ in range(args.sources):
                cx = float(rng.uniform(0.15, 0.85) * args.width)
                cy = float(rng.uniform(0.15, 0.85) * args.height)
                dv = synthgen.delta_volume_for_peak_phase(
                    args.peak_fringes * 2 * 3.141592653589793, 3000.0
                )
                sources.append(
                    synthgen.MogiParams(center_x=cx, center_y=cy, depth_m=3000.0, delta_volume_m3=dv)
                )
            synthgen.write_large_interferogram(
                out, args.width, args.height, sources, seed=args.seed
            )
        else:
            raster, mogi = synthgen.scene_with_source(
                args.seed,
                width=args.width,
                height=args.height,
                peak_fringes=args.peak_fringes,
                atmo_std_rad=args.atmo_std,
            )
            from .raster import write_raster

            write_raster(raster, out)
            print(f"source center: ({mogi.center_x:.1f}, {mogi.center_y:.1f})")
        print(f"wrote {out}")

    elif args.command == "train":
        config = nn.ModelConfig()
        hyper = nn.Hyper(
            learning_rate=args.lr,
            batch_size=args.batch_size,
            epochs=args.epochs,
            seed=args.seed,
        )
        records = synthgen.load_manifest(args.manifest)
        model, history = nn.train(config, hyper, records)
        nn.save_model(model, args.out)
        print(f"wrote {args.out}; final epoch loss {history[-1]:.4f}")

    elif args.command == "detect":
        if args.config:
            config = pipeline.RunConfig.from_json_file(args.config)
        else:
            config = pipeline.RunConfig(
                model_path=args.model,
                image_path=args.image,
                out_dir=args.out,
                detection_threshold=args.threshold,
                sigma=args.sigma,
                min_area_px=args.min_area,
                memory_budget_mib=args.budget_mib,
                run_id=args.run_id or "",
            )
        record = pipeline.detect_image(config)
        c = record.counts
        print(
            f"run {record.run_id}: {len(record.detections)} detections; "
            f"{c['patches_tested']}/{c['patches_total']} patches tested"
        )

    elif args.command == "eval":
        configs = _model_configs(args.configs)
        hyper = nn.Hyper(epochs=args.epochs, seed=args.seed)
        report_path = Path(args.out)
        plot_path = report_path.with_suffix(".png")
        report = pipeline.evaluate_manifest(
            args.manifest,
            configs,
            hyper,
            k=args.folds,
            seed=args.seed,
            report_path=report_path,
            plot_path=plot_path,
        )
        for name in report.config_names():
            print(f"{name}: mean AUC {report.mean_auc(name):.4f}")
        print(f"wrote {report_path} and {plot_path}")

    elif args.command == "serve":
        from .server import serve

        serve(args.port, args.data, args.ui)

    elif args.command == "retrain":
        store = pipeline.DataStore(args.data)
        store.initialize()
        entry = store.retrain()
        print(f"registered model version {entry.version} at {entry.path}")

    elif args.command == "init-data":
        pipeline.init_data(
            args.data,
            args.manifest,
            args.model,
            nn.ModelConfig(seed=args.seed),
            nn.Hyper(seed=args.seed),
        )
        print(f"initialized {args.data}")

    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (ValueError, FileNotFoundError, KeyError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
