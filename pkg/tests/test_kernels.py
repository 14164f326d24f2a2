import subprocess
import sys

import numpy as np
import pytest

from warp import kernels

from .oracles import brute_force_brightest_window


def _random_boxes(rng, n):
    x0 = rng.uniform(0, 80, n)
    y0 = rng.uniform(0, 80, n)
    w = rng.uniform(0.5, 40, n)
    h = rng.uniform(0.5, 40, n)
    return np.stack([x0, y0, x0 + w, y0 + h], axis=1)


class TestNumpyPath:
    def test_overlay_matches_formula(self, rng):
        x = rng.uniform(0, 255, (16, 16, 3))
        noise = rng.standard_normal((16, 16, 3))
        a, sigma = 0.3, 40.0
        expected = np.clip(np.rint((1 - a) * x + a * sigma * noise), 0, 255).astype(np.uint8)
        assert np.array_equal(kernels.overlay_u8_np(x, noise, a, sigma), expected)

    def test_window_argmax_against_brute_force(self, rng):
        for _ in range(20):
            b = rng.integers(0, 765, (rng.integers(8, 40), rng.integers(8, 40))).astype(np.int64)
            win = int(rng.integers(1, min(b.shape) + 1))
            assert kernels.window_sum_argmax_np(b, win, win) == \
                brute_force_brightest_window(b, win, win)

    def test_window_tie_breaks_row_major(self):
        b = np.zeros((6, 6), dtype=np.int64)
        b[1, 1] = 5
        b[4, 4] = 5
        # both bright pixels produce equal-sum windows; the first row-major wins
        assert kernels.window_sum_argmax_np(b, 2, 2) == (0, 0)
        assert brute_force_brightest_window(b, 2, 2) == (0, 0)

    def test_iou_matrix_values(self):
        a = np.array([[0.0, 0.0, 10.0, 10.0]])
        b = np.array([[5.0, 0.0, 15.0, 10.0], [20.0, 20.0, 30.0, 30.0]])
        m = kernels.iou_matrix_np(a, b)
        assert m[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert m[0, 1] == 0.0


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba backend not active")
class TestBackendParity:
    def test_overlay_bit_identical(self, rng):
        x = rng.uniform(0, 255, (64, 64, 3))
        noise = rng.standard_normal((64, 64, 3))
        for a in (0.0, 0.2, 0.999):
            np_out = kernels.overlay_u8_np(x, noise, a, 37.5)
            nb_out = kernels.overlay_u8_nb(x, noise, a, 37.5)
            assert np.array_equal(np_out, nb_out)

    def test_blend_bit_identical(self, rng):
        x = rng.uniform(0, 255, (32, 32, 3))
        noise = rng.standard_normal((32, 32, 3))
        assert np.array_equal(
            kernels.blend_np(x, noise, 0.37, 12.25),
            kernels.blend_nb(x, noise, 0.37, 12.25),
        )

    def test_window_identical(self, rng):
        for _ in range(10):
            b = rng.integers(0, 765, (33, 47)).astype(np.int64)
            win = int(rng.integers(1, 20))
            assert kernels.window_sum_argmax_np(b, win, win) == \
                tuple(kernels.window_sum_argmax_nb(b, win, win))

    def test_iou_matrix_bit_identical(self, rng):
        a = _random_boxes(rng, 40)
        b = _random_boxes(rng, 27)
        assert np.array_equal(kernels.iou_matrix_np(a, b), kernels.iou_matrix_nb(a, b))


def test_env_flag_selects_numpy_backend():
    code = (
        "from warp import kernels; "
        "assert kernels.active_backend() == 'numpy', kernels.active_backend(); "
        "assert kernels.overlay_u8 is kernels.overlay_u8_np"
    )
    proc = subprocess.run(
        [sys.executable, "-c", code],
        env={"WARP_NUMBA": "0", "PATH": "/usr/bin:/bin"},
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
