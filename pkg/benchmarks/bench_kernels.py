"""Timing comparison of the compiled and pure-numpy kernel backends.

Run without arguments to benchmark both backends and print a table:

    python3 benchmarks/bench_kernels.py

The backend is fixed at import time by AISEVAL_BACKEND, so the script
re-executes itself once per backend in a subprocess and gathers the
per-kernel medians.  Pass --backend to time a single backend in-process
(this is what the subprocesses do).
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

REPEATS = 7
POOL_M = 200_000
DRAWS = 1_000_000
K = 64          # leaf blocks (4^3 tree)
C = 2


def median_time(fn, repeats=REPEATS):
    fn()    # warm-up: includes jit compilation on the numba side
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_backend():
    from aiseval._kernels import (BACKEND, AliasSampler, alias_setup,
                                  det_weights, stoch_weights)
    from aiseval.harness import SyntheticPoolSpec, generate_synthetic_pool
    from aiseval.oracle_model import init_hyperparams
    from aiseval.partition import stratify_pool

    rng = np.random.default_rng(0)
    results = {}

    probs = rng.dirichlet(np.full(POOL_M, 0.5))
    results["alias_setup"] = median_time(lambda: alias_setup(probs))

    sampler = AliasSampler(probs)
    results["alias_draw_1M"] = median_time(
        lambda: sampler.draw(np.random.default_rng(1), DRAWS))

    gid = np.arange(POOL_M, dtype=np.int64)
    block = rng.integers(K, size=POOL_M)
    obs_label = np.where(rng.random(POOL_M) < 0.2, rng.integers(C, size=POOL_M), -1)
    norm = np.ascontiguousarray(rng.random((POOL_M, C)))
    floored = np.ascontiguousarray(0.05 * (norm > 0.5))
    post = np.ascontiguousarray(rng.dirichlet(np.ones(C), size=K))
    out = np.empty(POOL_M)
    results["det_weights"] = median_time(
        lambda: det_weights(gid, block, obs_label, norm, floored, post, out))
    results["stoch_weights"] = median_time(
        lambda: stoch_weights(gid, block, norm ** 2, floored, post, out))

    pool = generate_synthetic_pool(SyntheticPoolSpec(M=20_000, imbalance=10.0,
                                                     quality=1.5, seed=3))
    tree = stratify_pool(pool, K, 4, 3)
    labels = pool.true_labels
    items = rng.choice(pool.size, size=2_000, replace=False)

    def em_case():
        model = init_hyperparams(pool, tree)
        for i in items:
            model.observe(int(i), int(labels[i]))
        model.em_fit(tol=1e-10, max_iter=60)

    results["em_fit"] = median_time(em_case, repeats=5)
    return BACKEND, results


def run_child(backend):
    env = dict(os.environ, AISEVAL_BACKEND=backend)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--backend", backend],
        capture_output=True, text=True, env=env,
        cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        raise SystemExit(f"benchmark subprocess for {backend!r} failed")
    return json.loads(proc.stdout.splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--backend", choices=("numba", "numpy"),
                    help="time one backend and emit JSON (internal)")
    args = ap.parse_args()

    if args.backend:
        actual, results = bench_backend()
        if actual != args.backend:
            raise SystemExit(f"requested backend {args.backend!r} but got {actual!r}")
        print(json.dumps(results))
        return

    numba_res = run_child("numba")
    numpy_res = run_child("numpy")
    width = max(len(k) for k in numba_res)
    print(f"{'kernel':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}")
    for key in numba_res:
        tn, tp = numba_res[key], numpy_res[key]
        print(f"{key:<{width}}  {tn * 1e3:>8.2f}ms  {tp * 1e3:>8.2f}ms  {tp / tn:>7.1f}x")


if __name__ == "__main__":
    main()
