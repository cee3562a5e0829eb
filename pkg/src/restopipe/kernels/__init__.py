"""Hot image kernels with a compiled core and a pure-Python fallback.

Both backends implement identical semantics (symmetric boundary handling,
same weight formulas) and are cross-checked in the test suite. The
dispatcher routes each kernel to the faster implementation measured by
benchmarks/kernel_bench.py: the compiled core wins the loop-bound kernels
(non-local means, footprint median), while scipy's separable algorithms
keep convolution and window-min. Set RESTOPIPE_KERNELS=numpy or =native
to force one backend everywhere; forcing native without the built
extension raises.
"""

from __future__ import annotations

import os
from importlib import import_module

import numpy as np

from . import numpy_backend

_REQUESTED = os.environ.get("RESTOPIPE_KERNELS", "").strip().lower()

_native = None
if _REQUESTED != "numpy":
    try:
        _native = import_module("._native", __name__)
    except ImportError:
        if _REQUESTED == "native":
            raise ImportError(
                "RESTOPIPE_KERNELS=native but the compiled kernel core is not built"
            )

BACKEND = "native" if _native is not None else "numpy"

# per-kernel routing: native where the compiled loops win, scipy elsewhere
if _REQUESTED == "native":
    _IMPL = {name: _native for name in ("conv2d", "window_min", "footprint_median", "nlm")}
elif _native is not None:
    _IMPL = {
        "conv2d": numpy_backend,
        "window_min": numpy_backend,
        "footprint_median": _native,
        "nlm": _native,
    }
else:
    _IMPL = {name: numpy_backend for name in ("conv2d", "window_min", "footprint_median", "nlm")}


def backend_name() -> str:
    return BACKEND


def _pad2(a: np.ndarray, m: int) -> np.ndarray:
    return np.pad(a, ((m, m), (m, m)), mode="symmetric")


def conv2d(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D convolution with symmetric boundary, output same size as img.

    Kernel sides must be odd.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sides must be odd")
    padded = np.pad(img, ((kh // 2, kh // 2), (kw // 2, kw // 2)), mode="symmetric")
    return _IMPL["conv2d"].conv2d_valid(padded, kernel)


def window_min(img: np.ndarray, radius: int) -> np.ndarray:
    """Minimum over a (2r+1)^2 box around each pixel, symmetric boundary."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    img = np.ascontiguousarray(img, dtype=np.float64)
    return _IMPL["window_min"].window_min_valid(_pad2(img, radius), radius)


def footprint_median(img: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Median over samples at (dy, dx) offsets from each pixel.

    Even sample counts use the mean of the two middle values, matching
    np.median.
    """
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if offsets.ndim != 2 or offsets.shape[1] != 2 or offsets.shape[0] == 0:
        raise ValueError("offsets must be a non-empty (K, 2) array")
    img = np.ascontiguousarray(img, dtype=np.float64)
    margin = int(np.abs(offsets).max())
    return _IMPL["footprint_median"].footprint_median_valid(
        _pad2(img, max(margin, 1)), offsets, max(margin, 1)
    )


def nlm_denoise(
    rgb: np.ndarray,
    sigma: float,
    h: float,
    patch_radius: int = 1,
    window_radius: int = 4,
) -> np.ndarray:
    """Non-local means on an (H, W, 3) image.

    Patch distances are computed on Rec.601 luma and shared by all three
    channels; the weight for an offset patch is
    exp(-max(d2 - 2*sigma^2, 0) / h^2) with d2 the mean squared patch
    difference. sigma is the assumed noise level on the [0, 1] scale.
    """
    rgb = np.ascontiguousarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("nlm_denoise expects an (H, W, 3) array")
    if h <= 0:
        raise ValueError("h must be positive")
    pad = window_radius + patch_radius
    padded = np.pad(rgb, ((pad, pad), (pad, pad), (0, 0)), mode="symmetric")
    luma = (
        0.299 * padded[:, :, 0] + 0.587 * padded[:, :, 1] + 0.114 * padded[:, :, 2]
    )
    luma = np.ascontiguousarray(luma)
    return _IMPL["nlm"].nlm_valid(
        padded, luma, float(h) ** 2, 2.0 * float(sigma) ** 2, patch_radius, window_radius
    )
