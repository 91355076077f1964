#!/usr/bin/env python3
"""Benchmark the integer kernels: numba fast paths vs exact numpy fallbacks.

Both paths return bit-identical results (asserted here); the question is
only speed. Run:

    python3 benchmarks/bench_kernels.py

The active backend follows AUDITFL_BACKEND; this script times the numba
kernels directly (when importable) next to the fallback implementations,
so one invocation compares both.
"""
import time

import numpy as np

from auditfl import backend
from auditfl.randomness import derive_seed, prg

DIMS = [100, 1000, 7850, 100_000]
REPEAT = 200


def _raws(seed: int, n: int, bits: int) -> np.ndarray:
    words = prg(derive_seed(seed, "bench"), n)
    return (words % np.uint64(1 << (bits + 1))).astype(np.int64) - (1 << bits)


def time_call(fn, *args, repeat=REPEAT):
    fn(*args)  # warm up (numba compilation, caches)
    t0 = time.perf_counter()
    for _ in range(repeat):
        out = fn(*args)
    return (time.perf_counter() - t0) / repeat, out


def bench_dot():
    print(f"{'dot (exact wide accumulate)':<46} {'numba':>12} {'numpy-obj':>12} {'speedup':>9}")
    for dim in DIMS:
        a = _raws(1, dim, 44)
        b = _raws(2, dim, 44)
        t_fast = None
        if backend._NUMBA_OK:
            def fast(a=a, b=b):
                p = backend._dot_limbs_numba(a, b)
                return (
                    (int(p[0]) << 64)
                    + ((int(p[1]) + int(p[2]) + int(p[3])) << 32)
                    + int(p[4])
                )

            t_fast, r_fast = time_call(fast)
        t_obj, r_obj = time_call(backend._dot_object, a, b)
        if t_fast is not None:
            assert r_fast == r_obj
            print(f"  dim {dim:<8} {'':<31} {t_fast*1e6:>10.1f}us {t_obj*1e6:>10.1f}us {t_obj/t_fast:>8.1f}x")
        else:
            print(f"  dim {dim:<8} {'':<31} {'n/a':>12} {t_obj*1e6:>10.1f}us {'':>9}")


def bench_hadamard():
    print(f"{'hadamard (overflow-checked product)':<46} {'numba':>12} {'numpy':>12} {'speedup':>9}")
    for dim in DIMS:
        a = _raws(3, dim, 40)
        b = _raws(4, dim, 15)
        t_fast = None
        if backend._NUMBA_OK:
            def fast(a=a, b=b):
                out = np.empty_like(a)
                k = int(backend._hadamard_numba(a, b, out))
                assert k == -1
                return out

            t_fast, r_fast = time_call(fast)
        t_np, r_np = time_call(backend._hadamard_numpy, a, b)
        if t_fast is not None:
            assert np.array_equal(r_fast, r_np)
            print(f"  dim {dim:<8} {'':<31} {t_fast*1e6:>10.1f}us {t_np*1e6:>10.1f}us {t_np/t_fast:>8.1f}x")
        else:
            print(f"  dim {dim:<8} {'':<31} {'n/a':>12} {t_np*1e6:>10.1f}us {'':>9}")


def main():
    print(f"active backend: {backend.active_backend()}")
    print(f"(set AUDITFL_BACKEND=numpy to force the fallback everywhere)\n")
    bench_dot()
    print()
    bench_hadamard()


if __name__ == "__main__":
    main()
