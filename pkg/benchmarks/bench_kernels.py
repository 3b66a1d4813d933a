"""Timing comparison of the jitted kernels against the numpy fallback.

Runs each hot kernel on a training-shaped workload with both backends
and prints a table of median wall times plus the speedup. The first
jitted call compiles, so every case gets an untimed warmup.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--points N]
"""

import argparse
import time

import numpy as np

from scaledig import kernels_numpy

try:
    from scaledig import kernels_numba
except ImportError:
    kernels_numba = None


def _median_time(fn, repeat):
    fn()  # warmup; compiles on the jitted path
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def build_cases(n_points):
    rng = np.random.default_rng(0)
    planes = rng.standard_normal((3, 64, 64, 32)).astype(np.float32)
    pts = rng.uniform(-1.0, 1.0, size=(n_points, 3))
    dout = rng.standard_normal((n_points, 32))

    rays, samples, ch = 4096, 48, 8
    colors = rng.standard_normal((rays, samples, ch))
    sigmas = rng.uniform(0.0, 3.0, size=(rays, samples))
    deltas = np.full((rays, samples), 2.0 / samples)
    bg = rng.standard_normal(ch)
    dpix = rng.standard_normal((rays, ch))
    dtrans = rng.standard_normal(rays)

    xshape = (8, 64, 64, 32)
    cols = rng.standard_normal((8, 64, 64, 9 * 32))
    cols2 = rng.standard_normal((8, 32, 32, 9 * 32))

    return [
        (f"plane_gather ({n_points:,} pts)",
         lambda k: k.plane_gather(planes, pts)),
        (f"plane_scatter ({n_points:,} pts)",
         lambda k: k.plane_scatter(planes.shape, pts, dout)),
        (f"composite_fwd ({rays} rays x {samples})",
         lambda k: k.composite_fwd(colors, sigmas, deltas, bg)),
        (f"composite_bwd ({rays} rays x {samples})",
         lambda k: k.composite_bwd(colors, sigmas, deltas, bg, dpix, dtrans)),
        ("col2im (8x64x64x32, stride 1)",
         lambda k: k.col2im(cols, xshape, 3, 1, 1)),
        ("col2im (8x64x64x32, stride 2)",
         lambda k: k.col2im(cols2, xshape, 3, 2, 1)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7,
                    help="timed repetitions per case (median is reported)")
    ap.add_argument("--points", type=int, default=131072,
                    help="sample points for the plane kernels")
    args = ap.parse_args()

    print(f"{'kernel':<34} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, call in build_cases(args.points):
        t_np = _median_time(lambda: call(kernels_numpy), args.repeat)
        if kernels_numba is None:
            print(f"{name:<34} {t_np * 1e3:>10.2f} {'n/a':>10} {'n/a':>8}")
            continue
        t_nb = _median_time(lambda: call(kernels_numba), args.repeat)
        print(f"{name:<34} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} "
              f"{t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
