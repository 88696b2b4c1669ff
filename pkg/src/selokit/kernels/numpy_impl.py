"""Pure-numpy implementations of the hot raster kernels.

Fallback backend for environments without a working numba; selected with
``SELO_KERNELS=numpy``. Semantics are identical to the numba backend and the
two are compared element-for-element in the test suite and the benchmark.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Cap per-chunk scratch for the windowed median at roughly this many floats.
_MEDIAN_CHUNK_BUDGET = 16_000_000


def median_filter_2d(values: np.ndarray, kernel: int) -> np.ndarray:
    """Median of the kernel x kernel neighborhood, reflect-padded borders."""
    if kernel == 1:
        return values.copy()
    height, width = values.shape
    pad = kernel // 2
    padded = np.pad(values, pad, mode="reflect")
    windows = sliding_window_view(padded, (kernel, kernel))
    out = np.empty_like(values)
    chunk = max(1, _MEDIAN_CHUNK_BUDGET // (width * kernel * kernel))
    for r0 in range(0, height, chunk):
        r1 = min(r0 + chunk, height)
        flat = windows[r0:r1].reshape(r1 - r0, width, kernel * kernel)
        out[r0:r1] = np.median(flat, axis=2)
    return out


def window_max_mask(values: np.ndarray, window: int) -> np.ndarray:
    """Boolean mask of pixels equal to the max of their clipped window."""
    pad = window // 2
    padded = np.pad(values, pad, mode="constant", constant_values=-np.inf)
    row_max = sliding_window_view(padded, window, axis=1).max(axis=-1)
    win_max = sliding_window_view(row_max, window, axis=0).max(axis=-1)
    return values >= win_max


def accumulate_tiles(
    height: int,
    width: int,
    x0: np.ndarray,
    y0: np.ndarray,
    side: np.ndarray,
    score: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Scatter tile scores into (sum, count) rasters, in tile order."""
    acc = np.zeros((height, width), np.float32)
    cnt = np.zeros((height, width), np.uint16)
    for i in range(x0.shape[0]):
        xs, ys, s = int(x0[i]), int(y0[i]), int(side[i])
        acc[ys : ys + s, xs : xs + s] += score[i]
        cnt[ys : ys + s, xs : xs + s] += 1
    return acc, cnt


def polygon_cover_mask(
    xs: np.ndarray, ys: np.ndarray, height: int, width: int
) -> np.ndarray:
    """Pixels whose center lies inside the polygon (even-odd rule).

    Pixel (r, c) samples the point (c + 0.5, r + 0.5); centers exactly on a
    polygon edge count as inside.
    """
    mask = np.zeros((height, width), np.bool_)
    r_lo = max(0, int(np.floor(ys.min() - 0.5)))
    r_hi = min(height, int(np.ceil(ys.max() + 0.5)))
    c_lo = max(0, int(np.floor(xs.min() - 0.5)))
    c_hi = min(width, int(np.ceil(xs.max() + 0.5)))
    if r_lo >= r_hi or c_lo >= c_hi:
        return mask

    py = np.arange(r_lo, r_hi, dtype=np.float64) + 0.5
    px = np.arange(c_lo, c_hi, dtype=np.float64) + 0.5
    parity = np.zeros((py.size, px.size), np.bool_)
    on_edge = np.zeros_like(parity)
    n = xs.shape[0]
    for i in range(n):
        x0, y0 = xs[i], ys[i]
        x1, y1 = xs[(i + 1) % n], ys[(i + 1) % n]
        spans = ((y0 <= py) & (py < y1)) | ((y1 <= py) & (py < y0))
        if spans.any():
            x_int = x0 + (py[spans] - y0) * (x1 - x0) / (y1 - y0)
            parity[spans] ^= px[None, :] < x_int[:, None]
        in_ybox = (py >= min(y0, y1)) & (py <= max(y0, y1))
        in_xbox = (px >= min(x0, x1)) & (px <= max(x0, x1))
        if in_ybox.any() and in_xbox.any():
            cross = (x1 - x0) * (py[:, None] - y0) - (px[None, :] - x0) * (y1 - y0)
            on_edge |= in_ybox[:, None] & in_xbox[None, :] & (cross == 0.0)
    mask[r_lo:r_hi, c_lo:c_hi] = parity | on_edge
    return mask
