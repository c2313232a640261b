"""Wall-clock comparison of the numba and numpy Euler-Maruyama kernels.

Usage: python3 benchmarks/bench_kernels.py [--n 10 20 50] [--steps 20000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from recnet import _accel
from recnet.simulate import DIVERGENCE_LIMIT, GenConfig, generate_params


def _args_for(params, steps, seed):
    rng = np.random.default_rng(seed)
    n = params.n
    delta = 0.01
    noise = rng.standard_normal((steps, n))
    return (np.zeros(n), params.A, params.u, params.l, params.d, params.c,
            params.sigma * np.sqrt(delta), delta, 1, steps, noise, DIVERGENCE_LIMIT)


def best_time(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[10, 20, 50])
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed")

    print(f"{'n':>4} {'steps':>7} {'numpy_s':>10} {'numba_s':>10} {'speedup':>8} {'max_diff':>10}")
    for n in args.n:
        params = generate_params(GenConfig(n=n, seed=n))
        kargs = _args_for(params, args.steps, seed=1)
        _accel.euler_numba(*kargs)  # compile outside the timed region
        t_np = best_time(_accel.euler_numpy, kargs, args.repeat)
        t_nb = best_time(_accel.euler_numba, kargs, args.repeat)
        diff = np.max(np.abs(_accel.euler_numpy(*kargs)[0] - _accel.euler_numba(*kargs)[0]))
        print(f"{n:>4} {args.steps:>7} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
