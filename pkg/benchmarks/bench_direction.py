"""Benchmark the direction-scan backends: native extension vs pure Python
vs the fixed-kernel convolution realization.

Usage: python benchmarks/bench_direction.py [--size 256] [--repeats 5]
"""
import argparse
import statistics
import time

import numpy as np

from roadex import labels
from roadex.labels import (DirectionParams, angle_classes, direction_map_conv,
                           probe_offsets)


def bench_mask(size, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size].astype(float)
    mask = np.zeros((size, size), dtype=np.uint8)
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        offset = rng.uniform(0.2, 0.8) * size
        dist = np.abs((xx - offset) * np.sin(theta)
                      - (yy - offset) * np.cos(theta))
        mask |= dist < rng.uniform(2, 6)
    mask |= rng.random((size, size)) < 0.02
    return mask


def timeit(fn, repeats):
    fn()  # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--radius", type=int, default=9)
    ap.add_argument("--angle-div", type=int, default=16)
    args = ap.parse_args()

    params = DirectionParams.from_divisor(args.radius, args.angle_div)
    mask = bench_mask(args.size)
    offsets = probe_offsets(params)
    classes = angle_classes(params.n_angles)

    rows = []
    if labels.HAVE_NATIVE_SCAN:
        rows.append(("native scan", timeit(
            lambda: labels._dirscan.scan(mask, offsets, classes),
            args.repeats)))
    else:
        print("native extension not built; skipping")
    rows.append(("pure-python scan", timeit(
        lambda: labels._dirscan_py.scan(mask, offsets, classes),
        args.repeats)))
    rows.append(("conv realization", timeit(
        lambda: direction_map_conv(mask, params), args.repeats)))

    base = dict(rows).get("pure-python scan")
    print(f"mask {args.size}x{args.size}, radius {args.radius}, "
          f"{params.n_angles} angles, median of {args.repeats}")
    for name, t in rows:
        print(f"  {name:18s} {t * 1e3:9.2f} ms   x{base / t:7.1f}")


if __name__ == "__main__":
    main()
