#!/usr/bin/env python3
"""Compare the numba and numpy kernel backends on realistic workloads.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats 5]

Numba kernels compile on first use; a warmup call keeps compilation time
out of the numbers (cache=True also persists it across runs).
"""

import argparse
import time

import numpy as np

from sacnet.kernels import get_backend


def _timeit(fn, repeats):
    fn()                                     # warmup / JIT compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _workloads(g):
    x64 = g.normal(size=(16, 64, 64))
    w64 = g.normal(size=(32, 16, 3, 3))
    dy64 = g.normal(size=(32, 64, 64))
    up_in = g.normal(size=(32, 24, 24))
    up_dy = g.normal(size=(32, 96, 96))
    img = g.normal(size=(16, 48, 48))
    pi = g.uniform(0, 47, size=(9, 48, 48))
    pj = g.uniform(0, 47, size=(9, 48, 48))
    dsamp = g.normal(size=(16, 9, 48, 48))
    mask = g.random((128, 128)) < 0.2
    return [
        ("conv2d_fwd 16x64x64 -> 32", lambda be: be.conv2d_fwd(x64, w64, 1, 1)),
        ("conv2d_bwd_x same", lambda be: be.conv2d_bwd_x(dy64, w64, 1, 1, 64, 64)),
        ("conv2d_bwd_w same", lambda be: be.conv2d_bwd_w(dy64, x64, 1, 1, 3)),
        ("upsample_fwd 32x24x24 x4", lambda be: be.upsample_fwd(up_in, 4)),
        ("upsample_bwd same", lambda be: be.upsample_bwd(up_dy, 4, 24, 24)),
        ("bilin_gather 16ch, 9 taps, 48x48", lambda be: be.bilin_gather(img, pi, pj)),
        ("bilin_gather_bwd same", lambda be: be.bilin_gather_bwd(dsamp, img, pi, pj)),
        ("nearest_fg 128x128, 20% fg", lambda be: be.nearest_fg(mask)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5,
                    help="timed repetitions per kernel (best is reported)")
    args = ap.parse_args()

    backends = {}
    for name in ("numpy", "numba"):
        try:
            backends[name] = get_backend(name)
        except ImportError:
            print(f"backend {name} unavailable, skipping")
    g = np.random.default_rng(0)

    rows = []
    for label, call in _workloads(g):
        times = {name: _timeit(lambda be=be: call(be), args.repeats)
                 for name, be in backends.items()}
        rows.append((label, times))

    width = max(len(r[0]) for r in rows)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>10}" for n in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label, times in rows:
        cells = "  ".join(f"{times[n] * 1e3:9.3f}ms" for n in backends)
        line = f"{label:<{width}}  {cells}"
        if len(backends) == 2:
            line += f"  {times['numpy'] / times['numba']:7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
