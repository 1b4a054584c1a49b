"""Time the compiled and numpy kernel backends on identical inputs.

    python3 benchmarks/bench_kernels.py [--workers 256] [--dim 2] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from desloc import baselines, kernels
from desloc.optim import OptimizerSpec
from desloc.sim import ConstantLR, Objective, SimConfig, run


def best_of(fn, repeat: int, number: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        times.append((time.perf_counter() - t0) / number)
    return min(times)


def kernel_cases(kern, M: int, d: int, threads: int):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(M, d))
    u = np.zeros((M, d))
    v = np.zeros((M, d))
    g = rng.normal(size=(M, d))
    out = np.empty_like(x)
    c = np.zeros((M, d))
    k = np.ones(d)
    return {
        "mean_rows": lambda: kern.mean_rows(x),
        "row_norms": lambda: kern.row_norms(g),
        "clip_rows": lambda: kern.clip_rows(g.copy(), 1.0),
        "quadratic_grad": lambda: kern.quadratic_grad(x, c, k, out),
        "adam_step": lambda: kern.adam_step(x, u, v, v, g, 0.9, 0.999, 1e-16, 1e-9, False, threads),
        "adopt_step": lambda: kern.adopt_step(x, u, v, g, 0.9, 0.999, 1e-6, 1e-9, threads),
        "sgdm_step": lambda: kern.sgdm_step(x, u, g, 0.9, 1e-9, threads),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workers", type=int, default=256)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=2000, help="steps for the end-to-end run")
    args = ap.parse_args()

    names = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])
    print(f"M={args.workers} d={args.dim} threads={args.threads}  backends: {', '.join(names)}")
    results = {n: {} for n in names}
    for n in names:
        for case, fn in kernel_cases(kernels.backend(n), args.workers, args.dim, args.threads).items():
            results[n][case] = best_of(fn, args.repeat, 50)

    for n in names:
        cfg = SimConfig(M=args.workers, T=args.steps, optimizer=OptimizerSpec(kind="adam"),
                        schedule=ConstantLR(0.01), policies=baselines.des_loc(192, 192, 692),
                        objective=Objective(sigma=1.5), record_every=100,
                        threads=args.threads, backend=n)
        results[n]["run (rosenbrock)"] = best_of(lambda: run(cfg), max(1, args.repeat // 2), 1)

    print(f"{'kernel':<18}" + "".join(f"{n + ' [us]':>16}" for n in names)
          + (f"{'speedup':>10}" if len(names) == 2 else ""))
    for case in results["python"]:
        row = f"{case:<18}" + "".join(f"{results[n][case] * 1e6:>16.1f}" for n in names)
        if len(names) == 2:
            row += f"{results['python'][case] / results['compiled'][case]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
