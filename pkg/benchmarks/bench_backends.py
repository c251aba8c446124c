"""Time the compiled and the pure-numpy batch simulators on the same workload.

    python3 benchmarks/bench_backends.py [--paths N] [--horizon H] [--dt DT]

Both backends consume identical random streams, so the script also checks
that their terminal states agree. With LEVYLAB_DISABLE_NUMBA set only the
numpy backend is timed.
"""
import argparse
import time

import numpy as np

from levylab import SimParams, build_model, simulate_batch
from levylab._accel import NUMBA_ENABLED


def run(backend, model, params):
    simulate_batch(model, [0.0], params.replace(n_paths=8, horizon=params.dt * 4), backend=backend)  # warm-up
    start = time.perf_counter()
    res = simulate_batch(model, [0.0], params, backend=backend)
    return time.perf_counter() - start, res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--horizon", type=float, default=10.0)
    ap.add_argument("--dt", type=float, default=0.01)
    args = ap.parse_args()
    model = build_model("ou_jump", {"theta": 1.0}, {"atoms": [{"mark": 1.0, "weight": 1.0}]}, "raw")
    params = SimParams(dt=args.dt, horizon=args.horizon, n_paths=args.paths, seed=1)
    steps = args.paths * args.horizon / args.dt
    results = {}
    for backend in (["numba"] if NUMBA_ENABLED else []) + ["numpy"]:
        elapsed, res = run(backend, model, params)
        results[backend] = res
        print(f"{backend:>6}: {elapsed:8.3f} s  {1e9 * elapsed / steps:8.1f} ns/step")
    if len(results) == 2:
        a, b = results["numba"].states, results["numpy"].states
        print(f"max |numba - numpy| terminal difference: {np.max(np.abs(a - b)):.3e}")


if __name__ == "__main__":
    main()
