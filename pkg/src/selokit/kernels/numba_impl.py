"""Numba-compiled raster kernels (the default backend).

Each public function matches its twin in :mod:`selokit.kernels.numpy_impl`
element-for-element; the wrappers keep padding and dtype handling in plain
Python so the jitted inner loops stay simple.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _select_mid(buf, n):
    # Wirth in-place selection of the middle order statistic.
    k = n // 2
    lo, hi = 0, n - 1
    while lo < hi:
        pivot = buf[k]
        i, j = lo, hi
        while i <= j:
            while buf[i] < pivot:
                i += 1
            while pivot < buf[j]:
                j -= 1
            if i <= j:
                buf[i], buf[j] = buf[j], buf[i]
                i += 1
                j -= 1
        if j < k:
            lo = i
        if k < i:
            hi = j
    return buf[k]


@njit(cache=True, parallel=True)
def _median_core(padded, height, width, kernel):
    out = np.empty((height, width), padded.dtype)
    n = kernel * kernel
    for r in prange(height):
        buf = np.empty(n, padded.dtype)
        for c in range(width):
            idx = 0
            for dr in range(kernel):
                for dc in range(kernel):
                    buf[idx] = padded[r + dr, c + dc]
                    idx += 1
            out[r, c] = _select_mid(buf, n)
    return out


def median_filter_2d(values: np.ndarray, kernel: int) -> np.ndarray:
    """Median of the kernel x kernel neighborhood, reflect-padded borders."""
    if kernel == 1:
        return values.copy()
    padded = np.pad(values, kernel // 2, mode="reflect")
    return _median_core(padded, values.shape[0], values.shape[1], kernel)


@njit(cache=True, parallel=True)
def _window_max_core(values, window):
    height, width = values.shape
    half = window // 2
    mask = np.zeros((height, width), np.bool_)
    for r in prange(height):
        r0 = max(0, r - half)
        r1 = min(height, r + half + 1)
        for c in range(width):
            c0 = max(0, c - half)
            c1 = min(width, c + half + 1)
            v = values[r, c]
            is_max = True
            for rr in range(r0, r1):
                for cc in range(c0, c1):
                    if values[rr, cc] > v:
                        is_max = False
                        break
                if not is_max:
                    break
            mask[r, c] = is_max
    return mask


def window_max_mask(values: np.ndarray, window: int) -> np.ndarray:
    """Boolean mask of pixels equal to the max of their clipped window."""
    return _window_max_core(values, window)


@njit(cache=True)
def _accumulate_core(acc, cnt, x0, y0, side, score):
    for i in range(x0.shape[0]):
        xs, ys, s = x0[i], y0[i], side[i]
        v = score[i]
        for r in range(ys, ys + s):
            for c in range(xs, xs + s):
                acc[r, c] += v
                cnt[r, c] += 1


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
    _accumulate_core(acc, cnt, x0, y0, side, score)
    return acc, cnt


@njit(cache=True)
def _polygon_core(xs, ys, height, width, r_lo, r_hi, c_lo, c_hi):
    mask = np.zeros((height, width), np.bool_)
    n = xs.shape[0]
    for r in range(r_lo, r_hi):
        py = r + 0.5
        for c in range(c_lo, c_hi):
            px = c + 0.5
            inside = False
            on_edge = False
            for i in range(n):
                x0 = xs[i]
                y0 = ys[i]
                x1 = xs[(i + 1) % n]
                y1 = ys[(i + 1) % n]
                if (
                    min(y0, y1) <= py <= max(y0, y1)
                    and min(x0, x1) <= px <= max(x0, x1)
                    and (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0) == 0.0
                ):
                    on_edge = True
                    break
                if (y0 <= py < y1) or (y1 <= py < y0):
                    x_int = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
                    if px < x_int:
                        inside = not inside
            mask[r, c] = on_edge or inside
    return mask


def polygon_cover_mask(
    xs: np.ndarray, ys: np.ndarray, height: int, width: int
) -> np.ndarray:
    """Pixels whose center lies inside the polygon (even-odd rule).

    Pixel (r, c) samples the point (c + 0.5, r + 0.5); centers exactly on a
    polygon edge count as inside.
    """
    r_lo = max(0, int(np.floor(ys.min() - 0.5)))
    r_hi = min(height, int(np.ceil(ys.max() + 0.5)))
    c_lo = max(0, int(np.floor(xs.min() - 0.5)))
    c_hi = min(width, int(np.ceil(xs.max() + 0.5)))
    if r_lo >= r_hi or c_lo >= c_hi:
        return np.zeros((height, width), np.bool_)
    return _polygon_core(xs, ys, height, width, r_lo, r_hi, c_lo, c_hi)


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    v = np.zeros((4, 4), np.float32)
    median_filter_2d(v, 3)
    window_max_mask(v, 3)
    accumulate_tiles(
        4,
        4,
        np.zeros(1, np.int64),
        np.zeros(1, np.int64),
        np.full(1, 2, np.int64),
        np.zeros(1, np.float32),
    )
    polygon_cover_mask(
        np.array([0.0, 3.0, 3.0]), np.array([0.0, 0.0, 3.0]), 4, 4
    )
