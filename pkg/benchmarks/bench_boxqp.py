"""Compare the compiled and pure-Python batched box-QP kernels.

Usage: python benchmarks/bench_boxqp.py [--batch 2000] [--k 6] [--repeat 3]

Each problem is a random non-negative least-squares subproblem of the kind
solved per column of H in an alternating step.
"""
import argparse
import time

import numpy as np

from combifd.boxqp import HAVE_EXTENSION, box_qp_batch


def make_batch(batch, k, m=40, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.0, 1.0, (batch, m, k))
    a = rng.uniform(0.0, 1.0, (batch, m))
    G = 2.0 * np.einsum("bmi,bmj->bij", w, w)
    c = -2.0 * np.einsum("bmi,bm->bi", w, a)
    return G, c, np.zeros((batch, k)), np.full((batch, k), np.inf)


def timed(backend, args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = box_qp_batch(*args, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=2000)
    ap.add_argument("--k", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    problem = make_batch(args.batch, args.k)
    t_py, (x_py, _, st_py, _) = timed("python", problem, args.repeat)
    print(f"python   {t_py * 1e3:9.2f} ms  ({args.batch} problems, k={args.k})")
    if not HAVE_EXTENSION:
        print("compiled extension not built; nothing to compare")
        return
    t_ext, (x_ext, _, st_ext, _) = timed("ext", problem, args.repeat)
    print(f"compiled {t_ext * 1e3:9.2f} ms")
    print(f"speedup  {t_py / t_ext:9.1f}x")
    print(f"max |x_ext - x_py| = {np.max(np.abs(x_ext - x_py)):.2e}, "
          f"statuses agree: {bool(np.all(st_ext == st_py))}")


if __name__ == "__main__":
    main()
