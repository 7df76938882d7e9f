"""Time the compiled kernels against the numpy fallback on training-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from d3rq.kernels import backends


def workloads(rng):
    n_atoms, v_min, delta = 51, -10.0, 0.4
    values = rng.uniform(v_min, v_min + delta * (n_atoms - 1), (256, n_atoms))
    probs = rng.dirichlet(np.ones(n_atoms), 256)
    padded = rng.random((256, 9, 92, 92)).astype(np.float32)
    shifts = rng.uniform(-4, 4, (256, 2))
    size = 100_000
    next_ptr = np.arange(1, size + 1, dtype=np.int64)
    next_ptr[-1] = -1
    reward = rng.normal(size=size)
    terminal = rng.random(size) < 0.002
    truncated = np.zeros(size, dtype=np.bool_)
    truncated[499::500] = True
    starts = rng.integers(0, size - 10, 256)
    return {
        "project (256 x 51 atoms)": lambda m: m.project(values, probs, v_min, delta, n_atoms),
        "shift_crop (256 x 9 x 84 x 84)": lambda m: m.shift_crop(padded, shifts, 84, 84),
        "nstep_walk (256 starts, n=3)": lambda m: m.nstep_walk(next_ptr, reward, terminal,
                                                               truncated, starts, 3, 0.99),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    found = backends()
    if "compiled" not in found:
        print("compiled backend not built; only the fallback is timed")
    print(f"{'kernel':34s}" + "".join(f"{name:>14s}" for name in found) + "     speedup")
    for name, run in workloads(np.random.default_rng(0)).items():
        times = {b: min(timeit.repeat(lambda m=m: run(m), number=1, repeat=args.repeat))
                 for b, m in found.items()}
        cells = "".join(f"{times[b] * 1e3:11.3f} ms" for b in found)
        speedup = f"{times['pure'] / times['compiled']:9.1f}x" if "compiled" in times else ""
        print(f"{name:34s}{cells}{speedup}")


if __name__ == "__main__":
    main()
