"""Benchmark the numba kernels against the pure-numpy fallback.

Run:  python benchmarks/bench_backends.py [--repeats N]

Shapes mirror the default network on a training batch plus the edge-gate
gradient over one full-size patch. The numba timings exclude the one-off
JIT compile (a warmup call runs first).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fringefinder import kernels


def timeit(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    conv_shapes = [
        ((32, 2, 56, 56), (8, 2, 5, 5)),
        ((32, 8, 26, 26), (16, 8, 5, 5)),
        ((32, 16, 11, 11), (32, 16, 3, 3)),
    ]
    out = []
    for xs, ws in conv_shapes:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        b = np.zeros(ws[0], dtype=np.float32)
        label = f"conv {ws[0]}x{ws[1]}x{ws[2]}x{ws[3]} on {xs[2]}x{xs[3]}"
        out.append((f"{label} fwd", lambda k, x=x, w=w, b=b: k.conv2d_forward(x, w, b)))

        def bwd(k, x=x, w=w, b=b):
            dy = k.conv2d_forward(x, w, b)
            k.conv2d_backward(x, w, dy)

        out.append((f"{label} fwd+bwd", bwd))

    pool_x = rng.standard_normal((32, 8, 52, 52)).astype(np.float32)

    def pool(k, x=pool_x):
        y, arg = k.maxpool2_forward(x, 2)
        k.maxpool2_backward(x.shape, arg, y, 2)

    out.append(("maxpool2 52x52x8 fwd+bwd", pool))

    phase = rng.uniform(-np.pi, np.pi, size=(224, 224)).astype(np.float32)
    out.append(("wrapped_gradient 224x224", lambda k, p=phase: k.wrapped_gradient(p)))
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    backends = {}
    for name in ("numpy", "numba"):
        try:
            backends[name] = kernels.get_backend(name)
        except Exception as exc:
            print(f"skipping backend {name}: {exc}")

    rows = []
    for label, fn in cases(rng):
        timings = {}
        for name, mod in backends.items():
            fn(mod)  # warmup / JIT
            timings[name] = timeit(lambda: fn(mod), args.repeats)
        rows.append((label, timings))

    width = max(len(r[0]) for r in rows)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>10}" for n in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, timings in rows:
        line = f"{label:<{width}}  " + "  ".join(
            f"{timings[n] * 1000:>8.2f}ms" for n in backends
        )
        if len(timings) == 2:
            line += f"  {timings['numpy'] / timings['numba']:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
