"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is called on
identical inputs through both backends; the script prints the median wall
time per call and the speed-up, and checks that the outputs agree.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from bnpspatial import _kernels_py
from bnpspatial.graph import grid_graph

try:
    from bnpspatial import _kernels as compiled
except ImportError:  # pragma: no cover - depends on the build
    compiled = None


def cases(rng, size: int):
    g = grid_graph(size, size)
    offsets, indices = g.csr()
    n = g.n
    n_nb = np.asarray(g.n_neighbors, dtype=float)
    m = 20000
    lo = rng.normal(-1.0, 1.0, m)
    hi = lo + rng.exponential(1.0, m)
    lo2 = rng.normal(0.0, 2.0, m)
    hi2 = lo2 + rng.exponential(1.5, m)
    r = rng.uniform(-0.95, 0.95, m)
    u = rng.random(m)
    y = rng.poisson(10.0, n).astype(float)
    e = rng.uniform(5.0, 15.0, n)
    step = np.full(n, 0.3)
    normals = rng.standard_normal(n)
    logu = np.log(rng.random(n))
    p = 3
    design = np.column_stack([np.ones(n), rng.uniform(-1.5, 1.5, (n, p - 1))])
    chol = np.repeat(np.eye(p)[None] * 0.1, n, axis=0)
    normals_p = rng.standard_normal((n, p))
    b0 = rng.normal(0.0, 0.1, n)
    bp0 = rng.normal(0.0, 0.1, (n, p))
    return {
        f"rect_prob_std ({m} rectangles)": (
            "rect_prob_std", lambda: (lo, hi, lo2, hi2, r), None),
        f"trunc_norm_std ({m} draws)": (
            "trunc_norm_std", lambda: (lo, hi, u), None),
        f"car_sweep ({n} areas)": (
            "car_sweep", lambda: (b0.copy(), y, e, offsets, indices, n_nb, 0.5, step, normals, logu), 0),
        f"mcar_sweep ({n} areas, {p} coefficients)": (
            "mcar_sweep",
            lambda: (bp0.copy(), np.zeros(p), design, y, e, offsets, indices, n_nb, np.eye(p), chol, normals_p, logu),
            0),
    }


def bench(fn, make_args, state_pos, repeat: int):
    # Mutable state is rebuilt outside the timed region.
    args_list = [make_args() for _ in range(repeat)]
    it = iter(args_list)
    times = timeit.repeat(lambda: fn(*next(it)), number=1, repeat=repeat)
    out_args = make_args()
    result = fn(*out_args)
    return float(np.median(times)), (out_args[state_pos] if state_pos is not None else result)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=30, help="side of the square grid used by the sweeps")
    ap.add_argument("--repeat", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the fallback can be timed")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':45s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for label, (name, make_args, state_pos) in cases(rng, args.grid).items():
        t_py, out_py = bench(getattr(_kernels_py, name), make_args, state_pos, args.repeat)
        if compiled is None:
            print(f"{label:45s} {1e3 * t_py:10.3f} {'-':>10s} {'-':>9s}")
            continue
        t_c, out_c = bench(getattr(compiled, name), make_args, state_pos, args.repeat)
        if not np.allclose(out_py, out_c, rtol=1e-10, atol=1e-13):
            print(f"{label}: backends disagree")
            return 1
        print(f"{label:45s} {1e3 * t_py:10.3f} {1e3 * t_c:10.3f} {t_py / t_c:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
