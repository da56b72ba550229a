"""Compare the numba and pure-numpy kernel backends.

    python benchmarks/bench_kernels.py [--reps 7] [--json out.json]

Both implementations are called directly, so the MINIVLM_NUMBA flag does not
matter here. The first numba call (compilation) is excluded from timing.
"""
from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np

from minivlm.kernels import nms_numba, nms_numpy, roi_align_numba, roi_align_numpy


def random_boxes(rng, n, size=576.0):
    xy = rng.uniform(0, size * 0.8, (n, 2))
    wh = rng.uniform(4, size * 0.3, (n, 2))
    return np.c_[xy, np.minimum(xy + wh, size)]


def timeit(fn, reps):
    fn()
    samples = []
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t) * 1e3)
    return statistics.fmean(samples), statistics.stdev(samples)


def cases(rng):
    for n in (100, 1000, 4000):
        boxes, scores = random_boxes(rng, n), rng.random(n)
        yield (f"nms n={n}",
               lambda b=boxes, s=scores: nms_numpy(b, s, 0.5, 300),
               lambda b=boxes, s=scores: nms_numba(b, s, 0.5, 300))
    for n, c, hw in ((50, 64, 36), (300, 64, 72), (300, 160, 144)):
        feats = rng.normal(size=(c, hw, hw)).astype(np.float32)
        boxes = random_boxes(rng, n, hw * 8.0)
        yield (f"roi_align n={n} C={c} {hw}x{hw}",
               lambda f=feats, b=boxes: roi_align_numpy(f, b, 1 / 8, 4, 2),
               lambda f=feats, b=boxes: roi_align_numba(f, b, 1 / 8, 4, 2))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", default=None)
    args = ap.parse_args()
    if args.reps < 3:
        ap.error("--reps must be at least 3")
    rng = np.random.default_rng(args.seed)
    rows = []
    print(f"{'case':<32}{'numpy ms':>18}{'numba ms':>18}{'speedup':>10}")
    for name, f_np, f_nb in cases(rng):
        a, b = f_np(), f_nb()
        if not np.allclose(a, b, atol=1e-5):
            raise SystemExit(f"{name}: backends disagree")
        (m1, s1), (m2, s2) = timeit(f_np, args.reps), timeit(f_nb, args.reps)
        rows.append({"case": name, "numpy_ms": [m1, s1], "numba_ms": [m2, s2], "speedup": m1 / m2})
        print(f"{name:<32}{m1:>10.3f} +- {s1:<5.2f}{m2:>10.3f} +- {s2:<5.2f}{m1 / m2:>9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"reps": args.reps, "seed": args.seed, "results": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
