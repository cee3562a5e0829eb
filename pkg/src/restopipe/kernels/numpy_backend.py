"""Pure numpy/scipy kernel implementations (fallback backend).

All functions receive pre-padded inputs (symmetric boundary applied by the
dispatch layer) and return the valid interior region only, so both backends
share identical boundary semantics.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import minimum_filter, uniform_filter
from scipy.signal import fftconvolve


def conv2d_valid(padded: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return fftconvolve(padded, kernel, mode="valid")


def window_min_valid(padded: np.ndarray, radius: int) -> np.ndarray:
    size = 2 * radius + 1
    out = minimum_filter(padded, size=size, mode="constant", cval=np.inf)
    return out[radius:-radius, radius:-radius].copy()


def footprint_median_valid(
    padded: np.ndarray, offsets: np.ndarray, margin: int
) -> np.ndarray:
    h = padded.shape[0] - 2 * margin
    w = padded.shape[1] - 2 * margin
    stack = np.empty((offsets.shape[0], h, w), dtype=np.float64)
    for i, (dy, dx) in enumerate(offsets):
        stack[i] = padded[margin + dy : margin + dy + h, margin + dx : margin + dx + w]
    return np.median(stack, axis=0)


def nlm_valid(
    padded: np.ndarray,
    luma: np.ndarray,
    h2: float,
    two_sigma2: float,
    patch_r: int,
    window_r: int,
) -> np.ndarray:
    pad = window_r + patch_r
    h = padded.shape[0] - 2 * pad
    w = padded.shape[1] - 2 * pad
    k = 2 * patch_r + 1
    npatch = float(k * k)

    acc = np.zeros((h, w, 3), dtype=np.float64)
    wsum = np.zeros((h, w), dtype=np.float64)

    # patch-sum slab: luma window around the output region, extended by patch_r
    base = luma[pad - patch_r : pad + h + patch_r, pad - patch_r : pad + w + patch_r]

    for dy in range(-window_r, window_r + 1):
        for dx in range(-window_r, window_r + 1):
            shifted = luma[
                pad - patch_r + dy : pad + h + patch_r + dy,
                pad - patch_r + dx : pad + w + patch_r + dx,
            ]
            diff2 = (base - shifted) ** 2
            # box sum over the patch; interior of the filtered slab is exact
            sums = uniform_filter(diff2, size=k, mode="constant") * npatch
            sums = sums[patch_r : patch_r + h, patch_r : patch_r + w]
            d = np.maximum(sums / npatch - two_sigma2, 0.0)
            weight = np.exp(-d / h2)
            wsum += weight
            acc += weight[:, :, None] * padded[
                pad + dy : pad + h + dy, pad + dx : pad + w + dx, :
            ]

    return acc / wsum[:, :, None]
