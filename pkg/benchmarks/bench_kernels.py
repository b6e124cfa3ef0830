"""Compare the compiled and pure-numpy sum-product kernels.

    python3 benchmarks/bench_kernels.py [--rounds 10] [--repeat 20]

Both paths are called directly, so the EERAL_NUMBA flag is irrelevant here.
"""

import argparse
import time

import numpy as np

from eeral import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    ts, ta = 8, 9
    A = rng.normal(size=(ts, ta))
    B = rng.normal(size=(ta, ta))
    B = 0.5 * (B + B.T)
    # warm up the JIT (and its on-disk cache) outside the timed region
    _kernels.bp_marginals_numba(rng.normal(size=(1, ts)), rng.normal(size=(1, 2, ta)), A, B, 2)

    print(f"rounds={args.rounds} Ts={ts} Ta={ta}")
    print(f"{'G':>5}{'N':>4}{'numba ms':>12}{'numpy ms':>12}{'speedup':>9}{'max |diff|':>13}")
    for G, N in [(1, 6), (1, 12), (16, 9), (90, 9), (90, 12)]:
        us = rng.normal(size=(G, ts))
        ua = rng.normal(size=(G, N, ta))
        nb = _kernels.bp_marginals_numba(us, ua, A, B, args.rounds)
        npy = _kernels.bp_marginals_numpy(us, ua, A, B, args.rounds)
        diff = max(np.abs(nb[0] - npy[0]).max(), np.abs(nb[1] - npy[1]).max())
        t_nb = best_of(lambda: _kernels.bp_marginals_numba(us, ua, A, B, args.rounds), args.repeat)
        t_np = best_of(lambda: _kernels.bp_marginals_numpy(us, ua, A, B, args.rounds), args.repeat)
        print(f"{G:>5}{N:>4}{1e3 * t_nb:>12.3f}{1e3 * t_np:>12.3f}{t_np / t_nb:>9.2f}{diff:>13.2e}")


if __name__ == "__main__":
    main()
