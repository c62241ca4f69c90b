"""Benchmark the compiled pixel kernels against the numpy fallback.

The compiled loops win on the small grids reward scoring actually touches
(call overhead dominates there); numpy's vectorized ops win on large
grids. The default sweep shows both regimes.

Usage: python benchmarks/bench_kernels.py [--sizes 16,24,64,256] [--repeats 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dtr1._kernels import masks_py

try:
    from dtr1._kernels import _masks_c
except ImportError:
    _masks_c = None


def _time(fn, repeats: int) -> float:
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_size(size: int, repeats: int, radius: int) -> None:
    rng = np.random.default_rng(0)
    a = (rng.random((size, size)) < 0.4).astype(np.uint8)
    b = (rng.random((size, size)) < 0.4).astype(np.uint8)
    depth = rng.random((size, size)) * 10.0
    boundary_a = masks_py.boundary_map(a)
    boundary_b = masks_py.boundary_map(b)
    cases = {
        "iou_counts": lambda impl: impl.iou_counts(a, b),
        "boundary_map": lambda impl: impl.boundary_map(a),
        "boundary_match_counts": lambda impl: impl.boundary_match_counts(
            boundary_a, boundary_b, radius
        ),
        "masked_depth_stats": lambda impl: impl.masked_depth_stats(a, depth),
    }
    for name, call in cases.items():
        numpy_us = _time(lambda: call(masks_py), repeats) * 1e6
        line = f"{size:>5}  {name:<24}{numpy_us:>12.1f}"
        if _masks_c is not None:
            compiled_us = _time(lambda: call(_masks_c), repeats) * 1e6
            line += f"{compiled_us:>15.1f}{numpy_us / compiled_us:>9.1f}x"
        print(line)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="16,24,64,256")
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--radius", type=int, default=1)
    args = parser.parse_args()

    header = f"{'size':>5}  {'kernel':<24}{'numpy (us)':>12}"
    if _masks_c is not None:
        header += f"{'compiled (us)':>15}{'speedup':>9}"
    print(header)
    for size in (int(s) for s in args.sizes.split(",")):
        bench_size(size, args.repeats, args.radius)
    if _masks_c is None:
        print("compiled extension not built; showing numpy fallback only")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
