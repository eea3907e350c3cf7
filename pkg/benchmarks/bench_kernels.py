"""Numba vs numpy time stepping on neuron fields.

    python3 benchmarks/bench_kernels.py [--batch 441] [--steps 2048] [--dim 2] [--repeat 5]

Both backends run in one process (the env flag only changes default
dispatch), and their outputs are compared before timings are printed.
"""
import argparse
import time

import numpy as np

from odenet_uap import kernels


def setup(batch, steps, dim, pieces, seed=0):
    rng = np.random.default_rng(seed)
    X0 = rng.uniform(-1, 1, size=(batch, dim))
    dts = np.full(steps, 1.0 / steps)
    A = rng.normal(size=(pieces, dim))
    B = rng.normal(size=(pieces, dim, dim))
    G = rng.normal(size=(pieces, dim))
    piece = (np.arange(steps) * pieces) // steps
    idx3 = np.repeat(piece[:, None], 3, axis=1)   # start, midpoint, end rows
    save = np.zeros(steps, dtype=bool)
    save[-1] = True
    return X0, dts, A, B, G, piece, idx3, save


def best_of(fn, repeat):
    out = None
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t)
    return min(ts), out


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--batch", type=int, default=441)
    p.add_argument("--steps", type=int, default=2048)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--pieces", type=int, default=256)
    p.add_argument("--repeat", type=int, default=5)
    a = p.parse_args()
    X0, dts, A, B, G, piece, idx3, save = setup(a.batch, a.steps, a.dim, a.pieces)
    code = kernels.ACT_TANH
    print(f"batch={a.batch} steps={a.steps} dim={a.dim} pieces={a.pieces}")
    print(f"{'kernel':<8}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}{'max |diff|':>12}")
    for name, fn, idx in [("rk4", kernels.rk4_neuron, idx3), ("euler", kernels.euler_neuron, piece)]:
        fn(X0, dts, A, B, G, idx, code, 1.0, save, use_numba=True)        # compile / load cache
        tn, (xn, _) = best_of(lambda: fn(X0, dts, A, B, G, idx, code, 1.0, save, use_numba=True), a.repeat)
        tp, (xp, _) = best_of(lambda: fn(X0, dts, A, B, G, idx, code, 1.0, save, use_numba=False), a.repeat)
        diff = float(np.abs(xn - xp).max())
        print(f"{name:<8}{1e3 * tn:>12.2f}{1e3 * tp:>12.2f}{tp / tn:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
