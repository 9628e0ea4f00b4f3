"""Compare the numba-compiled kernels with their pure-numpy twins.

Times MOSFET evaluation/stamping, dense LU (factor + substitute) and a full
LDO line sweep under each backend.  The end-to-end figure runs the sweep in a
subprocess per backend, since the selection is fixed at import time by
LDOSIM_DISABLE_NUMBA.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ldosim import _kernels as K


def mosfet_problem(n_nodes: int, n_dev: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    idx = lambda: rng.integers(-1, n_nodes, n_dev)  # noqa: E731 - -1 is ground
    x = rng.uniform(-1.0, 3.3, n_nodes)
    d, g, s = idx(), idx(), idx()
    pol = rng.choice([-1.0, 1.0], n_dev)
    vto = np.full(n_dev, 0.45)
    beta = rng.uniform(1e-4, 1e-2, n_dev)
    lam = np.full(n_dev, 0.05)
    return x, d, g, s, pol, vto, beta, lam


def bench_stamp(fn, n_nodes, n_dev, repeat):
    x, d, g, s, pol, vto, beta, lam = mosfet_problem(n_nodes, n_dev)
    outs = [np.empty(n_dev) for _ in range(3)] + [np.empty(n_dev, dtype=np.int64), np.empty(n_dev, dtype=np.bool_)]

    def run():
        a = np.zeros((n_nodes, n_nodes))
        b = np.zeros(n_nodes)
        fn(a, b, x, d, g, s, pol, vto, beta, lam, 1e-12, *outs)

    run()  # compile / warm
    return min(timeit.repeat(run, number=20, repeat=repeat)) / 20


def bench_lu(factor, subst, n, repeat):
    rng = np.random.default_rng(1)
    a0 = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal(n)

    def run():
        a = a0.copy()
        perm, _ = factor(a, 1e-13)
        subst(a, perm, b)

    run()
    return min(timeit.repeat(run, number=20, repeat=repeat)) / 20


SWEEP = """
import time
from ldosim.ldobench import experiment_line_sweep, LdoTemplate
experiment_line_sweep(LdoTemplate())
t0 = time.perf_counter()
for _ in range(3):
    experiment_line_sweep(LdoTemplate())
print((time.perf_counter() - t0) / 3)
"""


def bench_sweep(disable: bool) -> float:
    env = dict(os.environ, LDOSIM_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SWEEP], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    print(f"{'kernel':<28}{'size':>10}{'numba [us]':>14}{'numpy [us]':>14}{'speedup':>10}")
    for n_nodes, n_dev in ((12, 9), (60, 50), (400, 400)):
        tj = bench_stamp(K.stamp_mosfets_jit, n_nodes, n_dev, args.repeat)
        tn = bench_stamp(K.stamp_mosfets_numpy, n_nodes, n_dev, args.repeat)
        print(f"{'stamp_mosfets':<28}{n_dev:>10}{tj * 1e6:>14.2f}{tn * 1e6:>14.2f}{tn / tj:>10.1f}")
    for n in (16, 64, 256):
        tj = bench_lu(K.lu_factor_jit, K.lu_substitute_jit, n, args.repeat)
        tn = bench_lu(K.lu_factor_numpy, K.lu_substitute_numpy, n, args.repeat)
        print(f"{'lu_factor+substitute':<28}{n:>10}{tj * 1e6:>14.2f}{tn * 1e6:>14.2f}{tn / tj:>10.1f}")
    tj, tn = bench_sweep(False), bench_sweep(True)
    print(f"{'LDO line sweep (81 pts)':<28}{'':>10}{tj * 1e6:>14.0f}{tn * 1e6:>14.0f}{tn / tj:>10.1f}")


if __name__ == "__main__":
    main()
