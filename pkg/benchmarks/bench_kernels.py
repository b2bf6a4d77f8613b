"""Numba vs numpy timings for the hot kernels, plus one end-to-end TC per path.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cape.kernels import _numba, _numpy

E2E = """
import time, numpy as np
from cape import metrics, kernels
rng = np.random.default_rng(0)
base = rng.integers(1, 6, 120).astype(float)
trajs = [np.clip(base + rng.integers(-1, 2, 120), 1, 5) for _ in range(3)]
metrics.tc(trajs[:2] + [base])  # warm up the jit
trajs = [np.clip(base + rng.integers(-1, 2, 120), 1, 5) for _ in range(3)]
t0 = time.perf_counter()
metrics.tc(trajs)
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def cases(rng):
    n, g = 480, 480
    xs = np.arange(1.0, n + 1)
    ys = rng.normal(size=n)
    lo = rng.normal(size=(3, g))
    hi = lo + rng.uniform(0.1, 2.0, size=(3, g))
    k = np.exp(-0.5 * np.subtract.outer(xs, xs) ** 2 / 25.0) + 0.1 * np.eye(n)
    inv = np.linalg.inv(k)
    alpha = inv @ ys
    wide_lo = rng.uniform(-100, 100, 5000)
    wide_hi = wide_lo + rng.exponential(1.0, 5000)
    return {
        "trailing_mean": (ys, 4),
        "rbf_gram": (xs, xs, 5.0),
        "union_width": (wide_lo, wide_hi),
        "overlap_ratio": (lo, hi),
        "rbf_grad_sums": (xs, alpha, np.tril(inv), 5.0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(1)
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  max |diff|")
    for name, call_args in cases(rng).items():
        f_np, f_nb = getattr(_numpy, name), getattr(_numba, name)
        out_nb = f_nb(*call_args)  # compile outside the timed region
        out_np = f_np(*call_args)
        diff = float(np.max(np.abs(np.asarray(out_np) - np.asarray(out_nb))))
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x  {diff:.1e}")

    print("\nend-to-end TC, 3 x 120 items (3 GP fits):")
    for flag in ("0", "1"):
        env = dict(os.environ, CAPE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"  {backend:<6} {float(secs):.3f} s")


if __name__ == "__main__":
    main()
