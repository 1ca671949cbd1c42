"""Time the compiled kernels against the numpy fallback and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--eig-size 120]

Prints one row per kernel: best-of-N wall time for each backend, the
speed-up, and whether the two outputs are bitwise identical.
"""
import argparse
import time

import numpy as np

from atdl import kernels


def best_time(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(eig_size):
    rng = np.random.default_rng(0)
    sym = rng.standard_normal((eig_size, eig_size))
    sym = sym + sym.T
    draws = kernels.splitmix_uniform(5, 0, 200_000, backend="python")

    def perm(backend):
        p = np.arange(draws.size, dtype=np.int64)
        kernels.fisher_yates(p, draws, backend=backend)
        return p

    return {
        "uniform(2e6)": lambda b: kernels.splitmix_uniform(7, 0, 2_000_000, backend=b),
        "mask(2e6, 0.3)": lambda b: kernels.splitmix_mask(7, 0, 2_000_000, 0.3, backend=b),
        "fisher_yates(2e5)": perm,
        f"jacobi_eigh({eig_size})": lambda b: kernels.jacobi_eigh(sym, backend=b)[:2],
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--eig-size", type=int, default=120)
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        print("compiled extension not available; only the fallback can be timed")
    print(f"{'kernel':<20} {'compiled s':>11} {'python s':>10} {'speed-up':>9}  identical")
    for name, fn in cases(args.eig_size).items():
        tp, op = best_time(lambda: fn("python"), args.repeat)
        if kernels.BACKEND == "compiled":
            tc, oc = best_time(lambda: fn("compiled"), args.repeat)
            print(f"{name:<20} {tc:>11.4f} {tp:>10.4f} {tp / tc:>8.1f}x  {same(oc, op)}")
        else:
            print(f"{name:<20} {'-':>11} {tp:>10.4f} {'-':>9}  -")


if __name__ == "__main__":
    main()
