"""Benchmark the compiled kernels against the pure-Python fallback.

Usage:
    python benchmarks/bench_kernels.py [--rays 200000] [--grids 40] [--size 64]

Both backends produce bit-identical results (asserted here); the table
reports wall-clock speedups for the two hot kernels.
"""

import argparse
import time

import numpy as np

from activetrack.kernels import available_backends, get_backend


def bench_rays(impl, n_rays, boxes, cams, pts):
    t0 = time.perf_counter()
    acc = 0.0
    for i in range(cams.shape[0]):
        acc += impl.clear_fraction(cams[i], pts[i], boxes)
    return time.perf_counter() - t0, acc


def bench_astar(impl, grids):
    t0 = time.perf_counter()
    total = 0
    for occ, start, goal in grids:
        path = impl.astar_grid(occ, *start, *goal)
        total += path.shape[0]
    return time.perf_counter() - t0, total


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rays", type=int, default=200000)
    parser.add_argument("--grids", type=int, default=40)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    backends = available_backends()
    if "ext" not in backends:
        print("compiled backend unavailable; benchmarking pure only")

    n_calls = max(1, args.rays // 16)
    boxes = np.empty((8, 5))
    for j in range(8):
        x0, y0 = rng.uniform(0, 16, 2)
        boxes[j] = [x0, y0, x0 + rng.uniform(1, 3), y0 + rng.uniform(1, 3),
                    rng.uniform(1.5, 3.0)]
    cams = rng.uniform(0, 16, (n_calls, 3))
    pts = rng.uniform(0, 16, (n_calls, 16, 3))

    grids = []
    for _ in range(args.grids):
        occ = (rng.random((args.size, args.size)) < 0.25).astype(np.uint8)
        occ[0, 0] = occ[-1, -1] = 0
        grids.append((occ, (0, 0), (args.size - 1, args.size - 1)))

    results = {}
    for name in backends:
        impl = get_backend(name)
        t_ray, acc = bench_rays(impl, args.rays, boxes, cams, pts)
        t_astar, cells = bench_astar(impl, grids)
        results[name] = (t_ray, acc, t_astar, cells)
        print(f"{name:5s} clear_fraction: {n_calls} calls in {t_ray:.3f}s "
              f"({n_calls / t_ray:,.0f}/s)  astar: {args.grids} grids in "
              f"{t_astar:.3f}s ({args.grids / t_astar:,.0f}/s)")

    if len(results) == 2:
        ext, pure = results["ext"], results["pure"]
        assert ext[1] == pure[1], "ray results diverged between backends"
        assert ext[3] == pure[3], "astar results diverged between backends"
        print(f"speedup: clear_fraction x{pure[0] / ext[0]:.1f}, "
              f"astar x{pure[2] / ext[2]:.1f} (results bit-identical)")


if __name__ == "__main__":
    main()
