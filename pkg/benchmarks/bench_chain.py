"""Compare the compiled and pure-Python chain smoothers.

    python benchmarks/bench_chain.py [--T 2000 5000] [--N 1 3 5] [--repeat 5]

Prints median wall time per call for each kernel and the speedup.
"""

import argparse
import time

import numpy as np

from capa import _kernels


def make_inputs(T, N, seed=0):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((2 * N, N))
    h = rng.standard_normal((T, N))
    J = W.T @ W
    lam = rng.uniform(0.1, 0.99, N)
    return h, J, lam, 1 - lam ** 2, np.ones(N)


def time_kernel(kernel, args, repeat):
    kernel(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        kernel(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main(argv=None):
    p = argparse.ArgumentParser(description="chain smoother benchmark")
    p.add_argument("--T", type=int, nargs="+", default=[1000, 4000])
    p.add_argument("--N", type=int, nargs="+", default=[1, 3, 5])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    compiled = _kernels.rts_smooth_compiled
    if compiled is None:
        print("compiled kernel not built; timing the Python kernel only")
    print(f"{'T':>6} {'N':>3} {'python ms':>11} {'compiled ms':>12} {'speedup':>8}")
    for T in args.T:
        for N in args.N:
            inputs = make_inputs(T, N)
            py = time_kernel(_kernels.rts_smooth_python, inputs, args.repeat)
            if compiled is None:
                print(f"{T:>6} {N:>3} {py * 1e3:>11.2f} {'-':>12} {'-':>8}")
                continue
            cy = time_kernel(compiled, inputs, args.repeat)
            print(f"{T:>6} {N:>3} {py * 1e3:>11.2f} {cy * 1e3:>12.2f} {py / cy:>7.1f}x")


if __name__ == "__main__":
    main()
