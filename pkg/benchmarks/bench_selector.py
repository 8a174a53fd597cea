"""Time the compiled and numpy selection kernels on random windows.

    python benchmarks/bench_selector.py [--repeats 200] [--sizes 8 16 32 64]
"""

import argparse
import time

import numpy as np

from fedel import selector
from fedel.profiler import TensorTiming
from fedel.window import BlockPartition, Window


def instances(n, count, rng):
    for _ in range(count):
        t = TensorTiming(rng.integers(1, 40, n) * selector.QUANTUM, rng.integers(1, 40, n) * selector.QUANTUM, [0.0], [0.0])
        budget = float(rng.uniform(0.2, 0.8) * (t.t_g.sum() + t.t_w.sum()))
        yield rng.exponential(size=n), t, budget


def bench(backend, n, repeats, seed):
    rng = np.random.default_rng(seed)
    part = BlockPartition.from_sizes([1] * n)
    window = Window(0, n - 1)
    cases = list(instances(n, repeats, rng))
    start = time.perf_counter()
    masks = [selector.select_tensors(imp, t, window, b, part, backend=backend).selected for imp, t, b in cases]
    return (time.perf_counter() - start) / repeats, masks


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 64])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = ["python"] + (["cython"] if selector.BACKEND == "cython" else [])
    print(f"default backend: {selector.BACKEND}")
    print(f"{'tensors':>8} " + " ".join(f"{b + ' (ms)':>14}" for b in backends) + ("   speedup" if len(backends) == 2 else ""))
    for n in args.sizes:
        times, results = [], []
        for b in backends:
            t, masks = bench(b, n, args.repeats, args.seed)
            times.append(t)
            results.append(masks)
        if len(results) == 2 and results[0] != results[1]:
            raise SystemExit(f"kernels disagree at n={n}")
        row = f"{n:>8} " + " ".join(f"{1e3 * t:>14.3f}" for t in times)
        if len(times) == 2:
            row += f"   {times[0] / times[1]:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
