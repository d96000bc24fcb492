#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs each hot kernel at several sizes and prints per-call times and the
speedup.  The numba variants compile on first call; a warmup run is
excluded from timing.  Select the numpy path package-wide at runtime with
IMULOC_NO_NUMBA=1; this script always times both paths directly.

Usage: python benchmarks/bench_kernels.py [--repeats 20]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from imuloc import kernels
from imuloc.backend import NUMBA_ENABLED


def timeit(fn, args, repeats):
    fn(*args)  # warmup / JIT compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def fb_args(rng, n, d=2):
    dt = np.full(n, 0.16)
    accel = rng.normal(0, 1, (n, d))
    cor = rng.normal(0, 0.01, (n, d))
    x0, v0 = np.zeros(d), np.zeros(d)
    xn, vn = rng.normal(0, 1, d), rng.normal(0, 0.1, d)
    anchors = np.zeros((n + 1, d))
    mask = np.zeros(n + 1, dtype=bool)
    return cor, accel, dt, x0, v0, xn, vn, 1.0, 1e3, 1e4, anchors, mask


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    print(f"numba available: {NUMBA_ENABLED}")
    rows = []
    for n in (300, 2000, 10000):
        a = fb_args(rng, n)
        rows.append((f"integrate_forward n={n}",
                     timeit(kernels.integrate_forward_np, (a[1], a[2], a[3], a[4]), args.repeats),
                     timeit(kernels.integrate_forward_nb, (a[1], a[2], a[3], a[4]), args.repeats)))
        rows.append((f"integrate_backward n={n}",
                     timeit(kernels.integrate_backward_np, (a[1], a[2], a[5], a[6]), args.repeats),
                     timeit(kernels.integrate_backward_nb, (a[1], a[2], a[5], a[6]), args.repeats)))
        rows.append((f"fb_loss_grad n={n}",
                     timeit(kernels.fb_loss_grad_np, a, args.repeats),
                     timeit(kernels.fb_loss_grad_nb, a, args.repeats)))
    for nq, nt, f in ((200, 2000, 192), (1000, 9000, 192)):
        q = rng.normal(0, 1, (nq, f))
        t = rng.normal(0, 1, (nt, f))
        rows.append((f"l1_distances {nq}x{nt}x{f}",
                     timeit(kernels.l1_distances_np, (q, t), max(3, args.repeats // 4)),
                     timeit(kernels.l1_distances_nb, (q, t), max(3, args.repeats // 4))))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel'.ljust(width)}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name.ljust(width)}  {t_np*1e3:9.3f}ms  {t_nb*1e3:9.3f}ms  "
              f"{t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
