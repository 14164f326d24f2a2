#!/usr/bin/env python3
"""Times the numba kernels against their pure-numpy fallbacks.

Runs every kernel through both implementations on realistic shapes and
prints the per-call medians plus the speedup. numba warm-up (JIT compile)
happens before timing. Use --repeats to stabilize numbers.
"""

import argparse
import statistics
import time

import numpy as np

from warp import kernels


def time_call(fn, *args, repeats=7, inner=3):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        samples.append((time.perf_counter() - t0) / inner)
    return statistics.median(samples)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    if not kernels.HAVE_NUMBA:
        raise SystemExit(
            "numba backend is inactive (WARP_NUMBA=0 or numba missing); "
            "nothing to compare"
        )

    rng = np.random.default_rng(0)

    x = rng.uniform(0, 255, (720, 1280, 3))
    noise = rng.standard_normal((720, 1280, 3))
    brightness = rng.integers(0, 765, (1080, 1920)).astype(np.int64)
    boxes_a = np.sort(rng.uniform(0, 600, (500, 4)), axis=1)
    boxes_b = np.sort(rng.uniform(0, 600, (500, 4)), axis=1)

    cases = [
        ("overlay_u8 720p", kernels.overlay_u8_np, kernels.overlay_u8_nb,
         (x, noise, 0.2, 40.0)),
        ("blend 720p", kernels.blend_np, kernels.blend_nb,
         (x, noise, 0.2, 40.0)),
        ("window_sum_argmax 1080p/25px", kernels.window_sum_argmax_np,
         kernels.window_sum_argmax_nb, (brightness, 25, 25)),
        ("iou_matrix 500x500", kernels.iou_matrix_np, kernels.iou_matrix_nb,
         (boxes_a, boxes_b)),
    ]

    # JIT warm-up and correctness spot check
    for name, np_fn, nb_fn, call_args in cases:
        ref = np_fn(*call_args)
        got = nb_fn(*call_args)
        if isinstance(ref, tuple):
            assert tuple(got) == tuple(ref), name
        else:
            assert np.array_equal(ref, got), name

    print(f"{'kernel':<32}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, np_fn, nb_fn, call_args in cases:
        t_np = time_call(np_fn, *call_args, repeats=args.repeats)
        t_nb = time_call(nb_fn, *call_args, repeats=args.repeats)
        print(f"{name:<32}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms"
              f"{t_np / t_nb:>9.2f}x")


if __name__ == "__main__":
    main()
