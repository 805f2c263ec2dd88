"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from almpc import _kernels_py as pure
from almpc.polytope import regular_polygon

try:
    from almpc import _kernels as compiled
except ImportError:
    compiled = None


def admm_case(n=12, m=30, seed=0):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.1 * np.eye(n)
    A = rng.normal(size=(m, n))
    q = rng.normal(size=n)
    l = -rng.uniform(0.5, 2.0, m)
    u = rng.uniform(0.5, 2.0, m)
    rho, sigma = np.full(m, 0.1), 1e-6
    Kinv = np.linalg.inv(P + sigma * np.eye(n) + A.T @ (rho[:, None] * A))
    return Kinv, P, A, q, l, u, rho, sigma


def run_admm(mod, case, iters=2000):
    Kinv, P, A, q, l, u, rho, sigma = case
    x, z, y = np.zeros(P.shape[0]), np.zeros(A.shape[0]), np.zeros(A.shape[0])
    # tolerances below reachable so every call runs the full iteration count
    mod.admm_loop(Kinv, P, A, q, l, u, rho, sigma, 1.6, x, z, y, iters, 0.0, 0.0, 0.0, 10)


def har_case(samples=2000, seed=0):
    poly = regular_polygon(3.0, 8)
    steps = 50 + samples * 2
    rng = np.random.default_rng(seed)
    return (np.array(poly.H), np.array(poly.h), np.zeros(2),
            np.ascontiguousarray(rng.normal(size=(steps, 2))), rng.random(steps), samples)


def run_har(mod, case):
    H, h, x0, D, U, n = case
    mod.hit_and_run(H, h, x0, n, 50, 2, D, U)


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    qp, har = admm_case(), har_case()
    rows = [("admm_loop (2000 it, n=12, m=30)", lambda m: run_admm(m, qp)),
            ("hit_and_run (2000 samples, 2-d)", lambda m: run_har(m, har))]
    print(f"{'kernel':36s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}")
    for name, fn in rows:
        tp = best(lambda: fn(pure), args.repeat) * 1e3
        if compiled is None:
            print(f"{name:36s} {tp:12.2f} {'n/a':>14s} {'n/a':>8s}")
            continue
        tc = best(lambda: fn(compiled), args.repeat) * 1e3
        print(f"{name:36s} {tp:12.2f} {tc:14.2f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
