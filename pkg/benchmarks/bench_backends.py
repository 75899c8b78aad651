"""Benchmark the compiled path kernel against the pure-Python fallback.

Runs the same ensemble through both backends, checks that they agree, and
reports paths/second and the speedup.

    python benchmarks/bench_backends.py [--paths N] [--t-max T]
"""

import argparse
import time

import numpy as np

from ctoqw import builtin_model, trajectory


def run(backend: str, model, n_paths: int, t_max: float, seed: int):
    init = (np.eye(model.n, dtype=complex) / model.n, np.zeros(model.d, dtype=np.int64))
    t0 = time.perf_counter()
    stats = trajectory.run_ensemble(
        model, init, t_max, [t_max], n_paths, seed, backend=backend
    )
    return stats, time.perf_counter() - t0


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=400)
    ap.add_argument("--t-max", type=float, default=30.0)
    ap.add_argument("--example", type=int, default=2, choices=(1, 2, 3))
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    model = builtin_model(args.example)
    backends = trajectory.available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; benchmarking the python backend only")

    results = {}
    for backend in backends:
        stats, elapsed = run(backend, model, args.paths, args.t_max, args.seed)
        results[backend] = (stats, elapsed)
        print(
            f"{backend:>7}: {elapsed:8.3f}s  {args.paths / elapsed:10.1f} paths/s  "
            f"jumps {int(stats.channel_jumps.sum())}  mean {stats.mean[0]}"
        )

    if len(results) == 2:
        a, b = results["cython"], results["python"]
        if a[0].counts != b[0].counts or not np.array_equal(a[0].mean, b[0].mean):
            print("BACKEND MISMATCH: ensembles disagree")
            return 1
        print(f"agreement: identical ensembles;  speedup x{b[1] / a[1]:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
