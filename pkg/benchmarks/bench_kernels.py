"""Compare the compiled and pure-Python geometry kernels.

Usage::

    python benchmarks/bench_kernels.py [--boxes 200] [--repeats 3] [--csv out.csv]

Reports the best-of-N wall time for each kernel on both backends, the
speedup, and whether the two backends returned bit-identical results.
"""

import argparse
import csv
import sys
import time

import numpy as np

from pseudolabel3d import kernels


def random_boxes(rng, n, extent=20.0):
    boxes = np.empty((n, 7))
    boxes[:, 0:2] = rng.uniform(-extent, extent, (n, 2))
    boxes[:, 2] = rng.uniform(-1.0, 1.0, n)
    boxes[:, 3:6] = rng.uniform(0.5, 5.0, (n, 3))
    boxes[:, 6] = rng.uniform(-np.pi, np.pi, n)
    return boxes


def best_time(fn, repeats):
    best, out = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(boxes, scores):
    order = np.argsort(-scores, kind="stable")
    return {
        "bev_iou_matrix": lambda k: k.bev_iou_matrix(boxes, boxes),
        "iou3d_matrix": lambda k: k.iou3d_matrix(boxes, boxes),
        "nms_bev": lambda k: k.nms_bev(boxes, order, 0.1),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--boxes", type=int, default=200, help="boxes per instance (default: %(default)s)")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="also write the results to this CSV file")
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not available; build the package first", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    # cluster the boxes so that many pairs overlap and the clipping path is exercised
    boxes = random_boxes(rng, args.boxes, extent=max(2.0, args.boxes ** 0.5))
    scores = rng.uniform(size=args.boxes)

    rows = []
    for name, fn in cases(boxes, scores).items():
        t_py, r_py = best_time(lambda: fn(backends["python"]), args.repeats)
        t_cy, r_cy = best_time(lambda: fn(backends["cython"]), args.repeats)
        same = bool(np.array_equal(np.asarray(r_py), np.asarray(r_cy)))
        rows.append((name, args.boxes, t_py, t_cy, t_py / t_cy, same))

    print(f"{'kernel':<16} {'n':>5} {'python s':>10} {'cython s':>10} {'speedup':>8}  identical")
    for name, n, t_py, t_cy, speedup, same in rows:
        print(f"{name:<16} {n:>5} {t_py:>10.4f} {t_cy:>10.4f} {speedup:>7.1f}x  {same}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("kernel", "n_boxes", "python_s", "cython_s", "speedup", "identical"))
            w.writerows(rows)
    return 0 if all(r[-1] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
