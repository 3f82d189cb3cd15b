#!/usr/bin/env python3
"""Benchmark the accelerated kernels against the pure-numpy fallback.

Run twice, once per path:

    python3 benchmarks/bench_kernels.py
    TRAINEFF_DISABLE_NUMBA=1 python3 benchmarks/bench_kernels.py
"""

import timeit

import numpy as np

from traineff import kernels


def bench(name, fn, *args, repeat=5, number=20):
    best = min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number
    print(f"{name:24s} {best * 1e3:10.3f} ms/call")
    return best


def main():
    rng = np.random.default_rng(7)
    watts = rng.uniform(20.0, 300.0, size=2_000_000)
    marks = np.sort(rng.choice(len(watts), size=1000, replace=False)).astype(np.int64)
    accs = rng.uniform(0.1, 1.0, size=1000)

    path = "numba" if kernels.USING_NUMBA else "numpy fallback"
    print(f"kernel path: {path}")
    # warm up so jit compilation is not billed to the first timing
    kernels.running_sum(watts[:1000])
    kernels.sums_at_marks(watts[:1000], np.arange(10, dtype=np.int64) * 100)
    kernels.efficiency_series(accs[:10], np.cumsum(watts[:10]))

    bench("running_sum", kernels.running_sum, watts)
    bench("sums_at_marks", kernels.sums_at_marks, watts, marks)
    totals = kernels.sums_at_marks(watts, marks)
    bench("efficiency_series", kernels.efficiency_series, accs, totals)


if __name__ == "__main__":
    main()
