"""Time the compiled slot loop against the numpy fallback.

Both backends get identical precomputed inputs, so only the per-slot
scheduling loop is measured. Usage: python benchmarks/bench_kernels.py
"""
import argparse
import time

import numpy as np

from qamimo import engine, kernels
from qamimo.scheduler import eta_table


def inputs(p, n):
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(p.seed).spawn(4)]
    _, lr, bits, arr, unif = engine._block_inputs(
        p, n, rngs, None, None, p.scheduler == "csio_lf")
    return lr, bits, arr, unif


def time_backend(fn, p, data, repeat):
    lr, bits, arr, unif = data
    n, K = unif.shape
    kind = kernels.SCHEDULER_CODES[p.scheduler]
    eta = eta_table(K, p.M, p.N, p.P)
    best = np.inf
    for _ in range(repeat):
        q = np.zeros(K, np.int64)
        outs = (np.empty(n, np.int64), np.empty(n, np.int32), np.empty(n, np.int32),
                np.empty(n), np.empty(n, np.int32), np.empty((n, K), np.int64),
                np.empty((n, K), np.int64))
        t0 = time.perf_counter()
        fn(kind, lr, bits, arr, unif, q, np.zeros(K), np.full(K, 1e-6), eta,
           p.V, p.L, p.T, 0, 1.0 / p.t_w, 1e-6, *outs)
        best = min(best, time.perf_counter() - t0)
    return best, outs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--slots", type=int, default=20000)
    ap.add_argument("--K", type=int, default=40)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.compiled_run_block is None:
        raise SystemExit("compiled kernel not built; run pip install -e . first")
    print(f"{'scheduler':10s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s} identical")
    for sched in engine.SCHEDULERS:
        p = engine.SimParams(K=args.K, scheduler=sched, V=0.005)
        data = inputs(p, args.slots)
        tp, op = time_backend(kernels.python_run_block, p, data, args.repeat)
        tc, oc = time_backend(kernels.compiled_run_block, p, data, args.repeat)
        same = all(np.array_equal(a, b) for a, b in zip(op, oc))
        print(f"{sched:10s} {tp:10.3f} {tc:10.4f} {tp / tc:8.1f} {same}")


if __name__ == "__main__":
    main()
