"""Time the numpy and numba versions of each kernel on the same inputs.

Run: python3 benchmarks/bench_kernels.py [--repeats 5]

The numba kernels are compiled once before timing, so compile time is not
counted.  Each row also checks the two paths agree.
"""
import argparse
import time

import numpy as np

from mlink import kernels
from mlink._accel import HAVE_NUMBA


def best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    ref = rng.integers(4, 60, size=400)
    hyp = rng.integers(4, 60, size=380)
    z = rng.normal(size=(256, 4 * 64))
    c = rng.normal(size=(256, 64))
    lo = rng.random((100_000, 2))
    a = np.hstack([lo, lo + rng.random((100_000, 2))])
    lo = rng.random((100_000, 2))
    b = np.hstack([lo, lo + rng.random((100_000, 2))])
    perf = rng.random((14, 14))
    costs = rng.random(14) + 1e-3
    return [
        ("edit_distance 400x380", kernels.edit_distance_np, kernels.edit_distance_nb, (ref, hyp)),
        ("lstm_pointwise_forward 256x64", kernels.lstm_pointwise_forward_np, kernels.lstm_pointwise_forward_nb, (z, c)),
        ("box_iou 1e5 rows", kernels.box_iou_np, kernels.box_iou_nb, (a, b)),
        ("subset_table k=14", kernels.subset_table_np, kernels.subset_table_nb, (perf, costs, 0.02)),
    ]


def agree(x, y):
    if isinstance(x, tuple):
        return all(agree(p, q) for p, q in zip(x, y))
    return np.allclose(x, y, rtol=1e-12, atol=1e-12)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; pip install -e .[fast]")

    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  agree")
    for name, np_fn, nb_fn, args_ in cases(np.random.default_rng(args.seed)):
        nb_fn(*args_)  # compile
        t_np, out_np = best_of(np_fn, args_, args.repeats)
        t_nb, out_nb = best_of(nb_fn, args_, args.repeats)
        print(f"{name:32s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:7.1f}x  {agree(out_np, out_nb)}")


if __name__ == "__main__":
    main()
