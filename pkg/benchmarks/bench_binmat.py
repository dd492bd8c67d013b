"""Benchmark the binary attention kernels: compiled core vs numpy fallback
vs float BLAS, over attention-shaped workloads.

Usage: python benchmarks/bench_binmat.py [--repeats N]
"""

import argparse
import time

import numpy as np

from spikeformer import kernels
from spikeformer.kernels import binmat as fallback


def timeit(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    shapes = [(64, 32), (196, 64), (256, 64), (512, 64)]
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'NxD':>10} {'density':>8} {'float_ms':>9} {'numpy_ms':>9} {'active_ms':>10} {'ok':>3}")
    for n, d in shapes:
        for density in (0.1, 0.3):
            q = (rng.random((n, d)) < density).astype(np.float64)
            k = (rng.random((n, d)) < density).astype(np.float64)
            ref = (q @ k.T).astype(np.int32)

            t_float = timeit(lambda: q @ k.T, args.repeats)
            t_numpy = timeit(lambda: fallback.binary_matmul(q, k), args.repeats)
            t_active = timeit(lambda: kernels.binary_matmul(q, k), args.repeats)
            ok = (np.array_equal(fallback.binary_matmul(q, k), ref)
                  and np.array_equal(kernels.binary_matmul(q, k), ref))
            print(f"{n:>6}x{d:<3} {density:>8.1f} {t_float*1e3:>9.3f} "
                  f"{t_numpy*1e3:>9.3f} {t_active*1e3:>10.3f} {'y' if ok else 'N':>3}")

    # Masked accumulation stage: integer map x binary V.
    print("\nmap-times-V stage (masked accumulation):")
    print(f"{'NxD':>10} {'numpy_ms':>9} {'active_ms':>10} {'ok':>3}")
    for n, d in shapes:
        attn = rng.integers(0, 6, (n, n)).astype(np.int64)
        v = (rng.random((n, d)) < 0.2).astype(np.float64)
        ref = (attn @ v.astype(np.int64)).astype(np.int32)
        t_numpy = timeit(lambda: fallback.masked_matmul(attn, v), args.repeats)
        t_active = timeit(lambda: kernels.masked_matmul(attn, v), args.repeats)
        ok = np.array_equal(kernels.masked_matmul(attn, v), ref)
        print(f"{n:>6}x{d:<3} {t_numpy*1e3:>9.3f} {t_active*1e3:>10.3f} {'y' if ok else 'N':>3}")


if __name__ == "__main__":
    main()
