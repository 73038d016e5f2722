"""Time the compiled and numpy kernel backends on the same inputs.

Usage: python3 benchmarks/bench_kernels.py [--points N] [--boxes B] [--repeat R]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from bucketflow import kernels
from bucketflow.core import Box3D


def make_inputs(n_points: int, n_boxes: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    points = rng.uniform(-40, 40, (n_points, 3))
    points[:, 2] = rng.uniform(0, 3, n_points)
    boxes = [
        Box3D(
            (float(x), float(y), 1.0),
            (float(rng.uniform(0.5, 6)), float(rng.uniform(0.5, 3)), 2.0),
            float(rng.uniform(-np.pi, np.pi)),
            "REGULAR_VEHICLE",
        )
        for x, y in rng.uniform(-35, 35, (n_boxes, 2))
    ]
    cells = rng.integers(0, 5 * 51, n_points)
    epe = rng.exponential(0.1, n_points)
    disp = rng.exponential(0.5, n_points)
    return points, boxes, cells, epe, disp


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=100_000)
    parser.add_argument("--boxes", type=int, default=40)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    points, boxes, cells, epe, disp = make_inputs(args.points, args.boxes)
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled extension not built; timing the numpy backend only")

    jobs = {
        "assign_points_to_boxes": lambda b: kernels.assign_points_to_boxes(points, boxes, 0.1, backend=b),
        "accumulate_cells": lambda b: kernels.accumulate_cells(cells, epe, disp, 5 * 51, backend=b),
    }
    print(f"{args.points} points, {args.boxes} boxes, best of {args.repeat}")
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, job in jobs.items():
        results = [job(b) for b in backends]
        if len(results) == 2:
            a, c = results
            same = np.array_equal(a, c) if isinstance(a, np.ndarray) else all(
                np.array_equal(x, y) if isinstance(x, np.ndarray) else x == y for x, y in zip(a, c)
            )
            if not same:
                raise SystemExit(f"{name}: backends disagree")
        times = [min(timeit.repeat(lambda: job(b), number=1, repeat=args.repeat)) for b in backends]
        row = f"{name:<24}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
