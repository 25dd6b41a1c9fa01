"""Head-to-head timing of the compiled and pure-numpy kernel paths.

Run from the repo root:

    python3 benchmarks/bench_kernels.py            # both paths, default sizes
    python3 benchmarks/bench_kernels.py --repeat 9

Workloads mirror the live pipeline: a 256x256 ultrasound frame warped
onto a 640x480 canvas, the marker mask over a full camera frame, the
band skeleton, contour distances and the final blend. Reported numbers
are the median of --repeat runs after one untimed warm call per path
(so numba compile time never pollutes the table).
"""

import argparse
import statistics
import time

import numpy as np

from sonotrainer import kernels


def _median_time(fn, args, repeat):
    fn(*args)  # warm: triggers compile on the numba path, page-in on numpy
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def build_workloads(rng):
    us = rng.integers(0, 256, (256, 256, 1), dtype=np.uint8)
    inv = np.array([[0.62, 0.31, -40.0], [-0.31, 0.62, 120.0]])

    band = np.zeros((192, 256), np.bool_)
    yy, xx = np.mgrid[0:192, 0:256]
    band |= np.abs(yy - (90 + 30 * np.sin(xx / 40.0))) < 6

    a = rng.uniform(0, 640, (300, 2))
    b = rng.uniform(0, 640, (280, 2))

    rgb = rng.integers(0, 256, (480, 640, 3), dtype=np.uint8)

    us_full = rng.integers(0, 256, (480, 640), dtype=np.uint8)
    pred_full = rng.integers(0, 256, (480, 640), dtype=np.uint8)
    us_alpha = rng.random((480, 640)) > 0.3
    pred_alpha = rng.random((480, 640)) > 0.5
    color = np.array([1.0, 0.85, 0.3])

    return [
        ("warp_affine_u8  256^2 -> 640x480", "warp_affine_u8",
         (us, inv, 480, 640, True, 0)),
        ("zhang_suen      256x192 band", "zhang_suen", (band,)),
        ("min_dists       300 x 280 pts", "min_dists", (a, b)),
        ("color_mask      640x480 RGB", "color_mask", (rgb, 10.0, 50.0, 0.45, 0.35)),
        ("composite       640x480 3-layer", "composite_additive",
         (rgb, us_full, us_alpha, pred_full, pred_alpha, 0.9, 0.4, 1.0, color)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7, help="timed runs per kernel")
    ap.add_argument("--seed", type=int, default=99)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    workloads = build_workloads(rng)

    print(f"numba available: {kernels.HAVE_NUMBA}  "
          f"(active path: {'numba' if kernels.HAVE_NUMBA else 'numpy'}; "
          f"set SONOTRAINER_NO_NUMBA=1 to force numpy)")
    header = f"{'kernel':34s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))

    for label, name, wargs in workloads:
        t_np = _median_time(getattr(kernels, name + "_numpy"), wargs, args.repeat)
        if kernels.HAVE_NUMBA:
            t_nb = _median_time(getattr(kernels, name + "_numba"), wargs, args.repeat)
            print(f"{label:34s} {t_np * 1e3:8.2f} ms {t_nb * 1e3:8.2f} ms "
                  f"{t_np / t_nb:7.1f}x")
        else:
            print(f"{label:34s} {t_np * 1e3:8.2f} ms {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
