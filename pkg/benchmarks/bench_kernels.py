"""Benchmark the jitted kernels against the pure-numpy fallback.

Runs each hot kernel on a realistic workload with both backends and
prints a timing table plus the max absolute disagreement. value_noise
must match bit for bit (it seeds scene synthesis); the arithmetic
kernels may differ by summation-order float error only.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--size PX]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from epimisr.kernels import numba_backend, numpy_backend


def _time(fn, args, repeats: int) -> tuple[float, np.ndarray]:
    out = fn(*args)  # warmup; also triggers jit compilation
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, np.asarray(out)


def build_workloads(size: int, rng: np.random.Generator) -> dict:
    h = w = size
    n = size * size
    c = 16
    f = rng.random((h, w, c))
    xs = rng.uniform(-2.0, w + 1.0, n)
    ys = rng.uniform(-2.0, h + 1.0, n)
    g = rng.random((n, c))
    x = rng.random((h, w, c))
    k3 = rng.random((3, 3, c, c))
    gy = rng.random((h, w, c))
    lat_x = rng.uniform(0.0, 7.0, n)
    lat_y = rng.uniform(0.0, 7.0, n)
    return {
        "bicubic_gather": (f, xs, ys),
        "bicubic_scatter": (g, xs, ys, h, w),
        "conv2d_forward": (x, k3),
        "conv2d_backward_input": (gy, k3),
        "conv2d_backward_kernel": (gy, x, 3, 3),
        "value_noise": (lat_x, lat_y, 12345, 4, 2.0, 0.5),
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--size", type=int, default=96, help="image side in pixels")
    args = ap.parse_args()

    work = build_workloads(args.size, np.random.default_rng(0))
    print(f"workload: {args.size}x{args.size}, best of {args.repeats}")
    header = f"{'kernel':<24}{'numpy':>12}{'numba':>12}{'speedup':>10}{'max|diff|':>12}"
    print(header)
    print("-" * len(header))
    for name, a in work.items():
        t_np, out_np = _time(getattr(numpy_backend, name), a, args.repeats)
        t_nb, out_nb = _time(getattr(numba_backend, name), a, args.repeats)
        diff = float(np.max(np.abs(out_np - out_nb))) if out_np.size else 0.0
        print(f"{name:<24}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms{t_np / t_nb:>9.1f}x{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
