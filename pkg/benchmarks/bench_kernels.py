"""Compare the compiled kernels against the pure numpy fallback.

Times the three hot paths (BEV density, density gradient, nearest squared
distances) on realistic scene sizes and prints per-call medians plus the
speedup. Runs whatever extension is importable; if the compiled module is
missing only the python column appears.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--points N ...]
"""

import argparse
import statistics
import time

import numpy as np

from advsim import _kernels_py
from advsim.kernels import BACKEND

try:
    from advsim import _kernels as _compiled
except ImportError:
    _compiled = None

# eval-scene sized anchor grid: 140 x 160 cells of 0.5 m, sigma 0.35
GRID = dict(x0=0.0, y0=-40.0, nx=140, ny=160, cell=0.5, sigma=0.35, cutoff=1.4)


def scene(n, seed):
    rng = np.random.default_rng(seed)
    px = rng.uniform(0.0, 70.0, n)
    py = rng.uniform(-40.0, 40.0, n)
    return np.ascontiguousarray(px), np.ascontiguousarray(py)


def timed(fn, repeats):
    samples = []
    fn()                              # warm up (caches, page faults)
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def bench_backend(impl, n, repeats):
    g = GRID
    px, py = scene(n, seed=1)
    coef = np.random.default_rng(2).normal(size=g["nx"] * g["ny"])
    ref_px, ref_py = scene(max(n // 2, 1), seed=3)
    ref = np.ascontiguousarray(np.column_stack([ref_px, ref_py, np.zeros_like(ref_px)]))
    pts = np.ascontiguousarray(np.column_stack([px, py, np.zeros_like(px)])[:300])

    def density():
        impl.bev_density(px, py, g["x0"], g["y0"], g["nx"], g["ny"],
                         g["cell"], g["sigma"], g["cutoff"])

    def gradient():
        impl.bev_point_gradient(px, py, coef, g["x0"], g["y0"], g["nx"],
                                g["ny"], g["cell"], g["sigma"], g["cutoff"])

    def nearest():
        impl.nearest_sq(pts, ref)

    return {
        "density": timed(density, repeats),
        "gradient": timed(gradient, repeats),
        "nearest_sq(300, n/2)": timed(nearest, repeats),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--points", type=int, nargs="+", default=[500, 2500, 10000])
    args = parser.parse_args()

    print(f"active package backend: {BACKEND}")
    if _compiled is None:
        print("compiled extension not built; timing the python fallback only")
    for n in args.points:
        print(f"\nn = {n} points")
        py_times = bench_backend(_kernels_py, n, args.repeats)
        c_times = bench_backend(_compiled, n, args.repeats) if _compiled else None
        for name, t_py in py_times.items():
            line = f"  {name:<22s} python {t_py * 1e3:8.3f} ms"
            if c_times:
                t_c = c_times[name]
                line += f"   compiled {t_c * 1e3:8.3f} ms   x{t_py / t_c:5.1f}"
            print(line)


if __name__ == "__main__":
    main()
