"""Hot numeric kernels with numba-accelerated and pure-numpy implementations.

Every kernel exists twice: a ``*_np`` pure-numpy version and, when numba is
importable, an ``@njit`` version compiled from the same arithmetic. The public
names (``overlay_u8``, ``blend``, ``window_sum_argmax``, ``iou_matrix``) are
bound at import time: set ``WARP_NUMBA=0`` in the environment to force the
numpy path. Both paths produce bit-identical results; ``benchmarks/`` compares
their speed.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = os.environ.get("WARP_NUMBA", "1").strip().lower()
_WANT_NUMBA = _ENV_FLAG not in ("0", "false", "no", "off")

try:
    if _WANT_NUMBA:
        from numba import njit

        HAVE_NUMBA = True
    else:
        HAVE_NUMBA = False
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAVE_NUMBA = False


# --- noise overlay -----------------------------------------------------------

def blend_np(x: np.ndarray, noise: np.ndarray, a: float, sigma: float) -> np.ndarray:
    """Pre-quantization overlay: (1-a)*x + (a*sigma)*noise, float64."""
    return (1.0 - a) * x + (a * sigma) * noise


def overlay_u8_np(x: np.ndarray, noise: np.ndarray, a: float, sigma: float) -> np.ndarray:
    """Blend, round half-to-even, clamp to [0, 255], return uint8."""
    y = np.rint((1.0 - a) * x + (a * sigma) * noise)
    return np.clip(y, 0.0, 255.0).astype(np.uint8)


# --- brightest-window search -------------------------------------------------

def _integral(brightness: np.ndarray) -> np.ndarray:
    s = np.zeros((brightness.shape[0] + 1, brightness.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(brightness, axis=0, dtype=np.int64), axis=1, out=s[1:, 1:])
    return s


def window_sum_argmax_np(brightness: np.ndarray, win_h: int, win_w: int) -> tuple[int, int]:
    """Anchor (row, col) of the brightest win_h x win_w window.

    ``brightness`` is an int64 matrix; sums are exact, ties resolve to the
    first window in row-major order.
    """
    s = _integral(brightness)
    sums = (
        s[win_h:, win_w:]
        - s[:-win_h, win_w:]
        - s[win_h:, :-win_w]
        + s[:-win_h, :-win_w]
    )
    flat = int(np.argmax(sums))
    return flat // sums.shape[1], flat % sums.shape[1]


# --- pairwise IoU ------------------------------------------------------------

def iou_matrix_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of every box pair; boxes are (N, 4) float64 corner-form rows."""
    ax0, ay0, ax1, ay1 = a[:, 0:1], a[:, 1:2], a[:, 2:3], a[:, 3:4]
    bx0, by0, bx1, by1 = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    iw = np.minimum(ax1, bx1) - np.maximum(ax0, bx0)
    ih = np.minimum(ay1, by1) - np.maximum(ay0, by0)
    inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    return inter / (area_a + area_b - inter)


if HAVE_NUMBA:

    @njit(cache=True)
    def blend_nb(x, noise, a, sigma):  # pragma: no cover - parity-tested
        out = np.empty(x.shape, dtype=np.float64)
        fx = x.ravel()
        fn = noise.ravel()
        fo = out.ravel()
        k1 = 1.0 - a
        k2 = a * sigma
        for i in range(fx.size):
            fo[i] = k1 * fx[i] + k2 * fn[i]
        return out

    @njit(cache=True)
    def overlay_u8_nb(x, noise, a, sigma):  # pragma: no cover - parity-tested
        out = np.empty(x.shape, dtype=np.uint8)
        fx = x.ravel()
        fn = noise.ravel()
        fo = out.ravel()
        k1 = 1.0 - a
        k2 = a * sigma
        for i in range(fx.size):
            v = np.rint(k1 * fx[i] + k2 * fn[i])
            if v < 0.0:
                v = 0.0
            elif v > 255.0:
                v = 255.0
            fo[i] = np.uint8(v)
        return out

    @njit(cache=True)
    def window_sum_argmax_nb(brightness, win_h, win_w):  # pragma: no cover
        h, w = brightness.shape
        s = np.zeros((h + 1, w + 1), dtype=np.int64)
        for i in range(h):
            row = np.int64(0)
            for j in range(w):
                row += brightness[i, j]
                s[i + 1, j + 1] = s[i, j + 1] + row
        best = np.int64(-1)
        best_r = 0
        best_c = 0
        for r in range(h - win_h + 1):
            for c in range(w - win_w + 1):
                v = (
                    s[r + win_h, c + win_w]
                    - s[r, c + win_w]
                    - s[r + win_h, c]
                    + s[r, c]
                )
                if v > best:
                    best = v
                    best_r = r
                    best_c = c
        return best_r, best_c

    @njit(cache=True)
    def iou_matrix_nb(a, b):  # pragma: no cover - parity-tested
        n = a.shape[0]
        m = b.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for i in range(n):
            area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
            for j in range(m):
                iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
                ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
                inter = iw * ih if (iw > 0.0 and ih > 0.0) else 0.0
                area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
                out[i, j] = inter / (area_a + area_b - inter)
        return out

    blend = blend_nb
    overlay_u8 = overlay_u8_nb
    window_sum_argmax = window_sum_argmax_nb
    iou_matrix = iou_matrix_nb
else:
    blend = blend_np
    overlay_u8 = overlay_u8_np
    window_sum_argmax = window_sum_argmax_np
    iou_matrix = iou_matrix_np


def active_backend() -> str:
    """Name of the kernel backend selected at import ('numba' or 'numpy')."""
    return "numba" if HAVE_NUMBA else "numpy"
