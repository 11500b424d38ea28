"""Compiled against pure-NumPy path kernels: same draws, same results, wall time.

    python benchmarks/bench_paths.py [--paths N] [--steps M] [--repeat R]
"""

import argparse
import time

import numpy as np

from pamlab.paths import kernels
from pamlab.streams import SeedStream


def _time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=2048)
    ap.add_argument("--steps", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    stream = SeedStream(1, "bench")
    start = np.array([1.0, 0.0, 0.0])
    starts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    ends = np.array([[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]])
    cases = {
        "brownian_block": lambda k: k.brownian_block(stream.generator(0), start, 1.0, args.steps, args.paths)[0],
        "pair_block": lambda k: k.pair_block(stream.generator(0), starts, ends, 1.0, args.steps, args.paths)[0],
    }
    print(f"{'kernel':<16}{'cython s':>12}{'python s':>12}{'speedup':>10}  identical")
    for name, case in cases.items():
        tc, rc = _time(lambda: case(kernels("cython")), args.repeat)
        tp, rp = _time(lambda: case(kernels("python")), args.repeat)
        print(f"{name:<16}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}  {np.array_equal(rc, rp)}")


if __name__ == "__main__":
    main()
