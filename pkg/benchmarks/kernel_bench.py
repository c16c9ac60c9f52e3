#!/usr/bin/env python3
"""Compare the compiled kernel extension against the pure-Python fallback.

Usage: python benchmarks/kernel_bench.py [--sizes 32,64,128] [--repeat 5]
"""

import argparse
import time
from array import array

from meshkit import backend


def bench(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="16,32,64,128")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    mods = backend.available_backends()
    if len(mods) < 2:
        print("compiled extension not built; nothing to compare")
        return
    names = [m.BACKEND_NAME for m in mods]
    print(f"backends: {', '.join(names)} (active: {backend.backend_name()})")
    print(f"{'kernel':<14}{'n':>6}" + "".join(f"{n:>14}" for n in names) + f"{'speedup':>10}")
    for n in sizes:
        a = array("d", [((i * 31 + 7) % 97) / 97.0 for i in range(n * n)])
        b = array("d", [((i * 17 + 3) % 89) / 89.0 for i in range(n * n)])
        rows = {
            "matmul": lambda m, x=a, y=b, k=n: m.matmul(x, y, k, k, k),
            "add": lambda m, x=a, y=b: m.add(x, y),
            "relu": lambda m, x=a: m.relu(x),
            "reduce_sum": lambda m, x=a, k=n: m.reduce_sum(x, 1, k, k),
        }
        for kernel, call in rows.items():
            times = [bench(call, m, repeat=args.repeat) for m in mods]
            out_fast = call(mods[0])
            out_slow = call(mods[-1])
            assert list(out_fast) == list(out_slow), f"{kernel} results diverge at n={n}"
            cols = "".join(f"{t * 1e6:>12.1f}us" for t in times)
            speedup = times[-1] / times[0] if times[0] > 0 else float("inf")
            print(f"{kernel:<14}{n:>6}{cols}{speedup:>9.1f}x")
    print("results verified bit-identical across backends")


if __name__ == "__main__":
    main()
