#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs each hot kernel on representative inputs with both backends, checks
the outputs agree element-for-element, and prints a timing table.

    python3 benchmarks/bench_kernels.py            # quick sizes
    python3 benchmarks/bench_kernels.py --full     # full-size rasters
"""

import argparse
import time

import numpy as np

from selokit.kernels import numpy_impl

try:
    from selokit.kernels import numba_impl
except ImportError:
    numba_impl = None


def timed(fn, *args, repeats=3):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def rows_for(full: bool):
    rng = np.random.default_rng(0)
    small = rng.random((512, 512)).astype(np.float32)
    big_side = 2048 if full else 1024
    big = rng.random((big_side, big_side)).astype(np.float32)

    n_tiles = 160
    x0 = rng.integers(0, big_side - 256, n_tiles)
    y0 = rng.integers(0, big_side - 256, n_tiles)
    side = rng.choice([128, 256], n_tiles)
    score = rng.random(n_tiles).astype(np.float32)

    poly_n = 12
    angles = np.sort(rng.random(poly_n) * 2 * np.pi)
    radius = big_side * (0.15 + 0.25 * rng.random(poly_n))
    xs = big_side / 2 + radius * np.cos(angles)
    ys = big_side / 2 + radius * np.sin(angles)

    rows = [
        (f"median_filter k=5 {big_side}x{big_side}",
         lambda impl: impl.median_filter_2d(big, 5)),
        ("median_filter k=41 256x256",
         lambda impl: impl.median_filter_2d(small[:256, :256], 41)),
        (f"window_max w=5 {big_side}x{big_side}",
         lambda impl: impl.window_max_mask(big, 5)),
        (f"accumulate {n_tiles} tiles {big_side}x{big_side}",
         lambda impl: impl.accumulate_tiles(
             big_side, big_side, x0, y0, side, score)),
        (f"polygon_mask {poly_n} vertices {big_side}x{big_side}",
         lambda impl: impl.polygon_cover_mask(xs, ys, big_side, big_side)),
    ]
    if full:
        rows.insert(2, ("median_filter k=41 1024x1024",
                        lambda impl: impl.median_filter_2d(big[:1024, :1024], 41)))
    return rows


def equal(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--full", action="store_true",
                        help="benchmark full-size rasters (slower)")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if numba_impl is None:
        raise SystemExit("numba backend unavailable; nothing to compare")

    numba_impl.warmup()
    print(f"{'kernel':<44} {'numpy':>10} {'numba':>10} {'speedup':>8}  match")
    for label, call in rows_for(args.full):
        t_np, r_np = timed(lambda: call(numpy_impl), repeats=args.repeats)
        t_nb, r_nb = timed(lambda: call(numba_impl), repeats=args.repeats)
        ok = "yes" if equal(r_np, r_nb) else "NO"
        print(f"{label:<44} {t_np*1000:>8.1f}ms {t_nb*1000:>8.1f}ms "
              f"{t_np/t_nb:>7.1f}x  {ok}")


if __name__ == "__main__":
    main()
