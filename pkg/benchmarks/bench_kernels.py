"""Compiled vs pure-Python kernel timings: contact gap, waypoint resolve, kd-tree query.

    python benchmarks/bench_kernels.py [--reps 5] [--points 50000]

Each row reports the median wall time of both kernels on identical inputs
and checks that their outputs match bit for bit.
"""
import argparse
import statistics
import sys
import time

import numpy as np

from cmreg import _backend
from cmreg.contact import ContactModel
from cmreg.geometry import builtin_pair
from cmreg.kdtree import KDTree


def median_time(fn, reps):
    fn()
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def engaged(rng, n):
    P = np.zeros((n, 6))
    P[:, :2] = rng.uniform(-1.5, 1.5, (n, 2))
    P[:, 2] = -rng.uniform(1.0, 25.0, n)
    P[:, 3:] = rng.uniform(-4, 4, (n, 3))
    return P


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--points", type=int, default=50_000)
    ap.add_argument("--geometry", default="gear")
    args = ap.parse_args(argv)
    if not _backend.compiled_available():
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    pair = builtin_pair(args.geometry)
    fast = ContactModel(pair, kernel=_backend.ContactKernel)
    slow = ContactModel(pair, kernel=_backend.FallbackContactKernel)
    P = engaged(rng, 2000)
    W = engaged(rng, 200)
    pts = rng.normal(scale=2.0, size=(args.points, 6))
    Q = rng.normal(scale=2.0, size=(1000, 6))
    tree = KDTree(pts)

    cases = [
        (f"gap x{len(P)}", lambda: fast.gaps(P), lambda: slow.gaps(P)),
        (f"resolve x{len(W)}", lambda: fast.resolve_many(W), lambda: slow.resolve_many(W)),
        (f"kd query {len(Q)} in {args.points}", lambda: tree.query(Q),
         lambda: tree.query(Q, backend=_backend.fallback_kd_query)),
    ]
    print(f"{'kernel':<28} {'compiled ms':>12} {'python ms':>12} {'speedup':>8}  identical")
    for name, f_fast, f_slow in cases:
        a, b = f_fast(), f_slow()
        same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) \
            else np.array_equal(a, b)
        tf = median_time(f_fast, args.reps)
        ts = median_time(f_slow, args.reps)
        print(f"{name:<28} {1e3 * tf:12.2f} {1e3 * ts:12.2f} {ts / tf:7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
