"""Classical restoration operators backing the builtin tool catalog.

These are deliberately non-neural: the searches and benchmarks in this
package study decision quality over a pool of tools with distinct
competence regions, which classical algorithms provide at a fraction of
the cost of deep restorers.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from .degrade import motion_kernel
from .image import ImageBuffer


def _luma(arr: np.ndarray) -> np.ndarray:
    return 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]


def _finish(arr: np.ndarray) -> ImageBuffer:
    return ImageBuffer.from_array(arr, clamp=True)


# --- denoising -------------------------------------------------------------

def denoise_nlm(img: ImageBuffer, sigma255: float) -> ImageBuffer:
    """Non-local means tuned for an assumed noise level (0-255 scale)."""
    sigma = sigma255 / 255.0
    h = max(0.55 * sigma, 1.2 / 255.0)
    out = kernels.nlm_denoise(img.data, sigma=sigma, h=h, patch_radius=1, window_radius=4)
    return _finish(out)


# --- JPEG deblocking -------------------------------------------------------

def _deblock_axis(arr: np.ndarray, axis: int, strength: float, threshold: float) -> np.ndarray:
    """Smooth 8-px block boundaries along one axis where the jump looks like
    a coding artifact (small step) rather than a real edge."""
    out = arr.copy()
    n = arr.shape[axis]
    for edge in range(8, n, 8):
        sl_b = [slice(None)] * arr.ndim
        sl_c = [slice(None)] * arr.ndim
        sl_a = [slice(None)] * arr.ndim
        sl_d = [slice(None)] * arr.ndim
        sl_b[axis] = edge - 1
        sl_c[axis] = edge
        sl_a[axis] = edge - 2
        sl_d[axis] = min(edge + 1, n - 1)
        b, c = arr[tuple(sl_b)], arr[tuple(sl_c)]
        a, d = arr[tuple(sl_a)], arr[tuple(sl_d)]
        step = c - b
        mask = np.abs(step) < threshold
        w = strength * mask
        out[tuple(sl_b)] = b + step * w * 0.4
        out[tuple(sl_c)] = c - step * w * 0.4
        out[tuple(sl_a)] = a + step * w * 0.15
        out[tuple(sl_d)] = d - step * w * 0.15
    return out


def dejpeg_deblock(img: ImageBuffer, severe: bool) -> ImageBuffer:
    arr = img.data.copy()
    if severe:
        strength, threshold = 1.0, 0.22
    else:
        strength, threshold = 0.8, 0.10
    arr = _deblock_axis(arr, axis=1, strength=strength, threshold=threshold)
    arr = _deblock_axis(arr, axis=0, strength=strength, threshold=threshold)
    if severe:
        # knock down ringing in flat regions
        smooth = np.empty_like(arr)
        for c in range(3):
            smooth[:, :, c] = gaussian_filter(arr[:, :, c], sigma=0.8, mode="reflect")
        lum = _luma(arr)
        local_var = gaussian_filter(lum**2, 1.5, mode="reflect") - gaussian_filter(lum, 1.5, mode="reflect") ** 2
        flat = np.clip(1.0 - local_var / 0.002, 0.0, 1.0)
        arr = arr * (1 - 0.6 * flat[:, :, None]) + smooth * 0.6 * flat[:, :, None]
    return _finish(arr)


# --- motion deblurring -----------------------------------------------------

def _whitened_spectrum(arr: np.ndarray):
    """Magnitude spectrum of luma divided by its own radial mean, which
    removes the scene's spectral slope and leaves the blur signature."""
    lum = _luma(arr)
    lum = lum - lum.mean()
    win = np.outer(np.hanning(lum.shape[0]), np.hanning(lum.shape[1]))
    mag = np.fft.fftshift(np.abs(np.fft.fft2(lum * win)))
    fy = np.fft.fftshift(np.fft.fftfreq(lum.shape[0]))[:, None]
    fx = np.fft.fftshift(np.fft.fftfreq(lum.shape[1]))[None, :]
    r = np.hypot(fy * np.ones_like(fx), fx * np.ones_like(fy))
    nbins = 40
    bins = np.minimum((r / (r.max() + 1e-12) * nbins).astype(int), nbins - 1)
    counts = np.maximum(np.bincount(bins.ravel(), minlength=nbins), 1)
    radial = np.bincount(bins.ravel(), mag.ravel(), minlength=nbins) / counts
    return mag / np.maximum(radial[bins], 1e-12), fx, fy, r


def estimate_blur_angle(arr: np.ndarray, assumed_length: float = 15.0, n_angles: int = 36) -> float:
    """Blur direction: angle whose line-blur transfer function best matches
    the whitened spectrum (log-domain correlation against |sinc(L u)|)."""
    spec, fx, fy, r = _whitened_spectrum(arr)
    band = (r > 0.04) & (r < 0.45)
    log_spec = np.log(np.maximum(spec, 1e-6))
    ls = log_spec[band]
    ls = ls - ls.mean()
    best_angle, best_corr = 0.0, -math.inf
    for i in range(n_angles):
        theta = math.pi * i / n_angles
        u = fx * math.cos(theta) + fy * math.sin(theta)
        lh = np.log(np.maximum(np.abs(np.sinc(assumed_length * u)), 1e-6))[band]
        lh = lh - lh.mean()
        corr = float((ls * lh).sum() / math.sqrt((ls * ls).sum() * (lh * lh).sum()))
        if corr > best_corr:
            best_corr, best_angle = corr, theta
    return best_angle


def deblur_wiener(img: ImageBuffer, assumed_length: float = 15.0, nsr: float = 0.02) -> ImageBuffer:
    arr = img.data
    theta = estimate_blur_angle(arr, assumed_length)
    k = motion_kernel(assumed_length, theta)
    kh, kw = k.shape
    pad = max(kh, kw)
    out = np.empty_like(arr)
    h, w = arr.shape[:2]
    hp, wp = h + 2 * pad, w + 2 * pad
    kf = np.zeros((hp, wp), dtype=np.float64)
    kf[:kh, :kw] = k
    kf = np.roll(kf, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    H = np.fft.rfft2(kf)
    filt = np.conj(H) / (np.abs(H) ** 2 + nsr)
    for c in range(3):
        padded = np.pad(arr[:, :, c], pad, mode="symmetric")
        rec = np.fft.irfft2(np.fft.rfft2(padded) * filt, s=(hp, wp))
        out[:, :, c] = rec[pad : pad + h, pad : pad + w]
    return _finish(out)


# --- rain / snow removal ---------------------------------------------------

def _line_offsets(theta: float, length: int) -> np.ndarray:
    half = length // 2
    dy, dx = math.sin(theta), math.cos(theta)
    offs = {(int(round(t * dy)), int(round(t * dx))) for t in range(-half, half + 1)}
    uniq = sorted(offs)
    if len(uniq) % 2 == 0:  # odd count keeps the median a real sample
        uniq = uniq[:-1]
    return np.array(uniq, dtype=np.int64)


def estimate_streak_angle(arr: np.ndarray, n_angles: int = 12) -> float:
    """Orientation along which the bright residual is most coherent."""
    lum = _luma(arr)
    residual = np.clip(lum - gaussian_filter(lum, 2.0, mode="reflect"), 0.0, None)
    best_theta, best_score = math.pi / 2, -math.inf
    for i in range(n_angles):
        theta = math.pi * i / n_angles
        offs = _line_offsets(theta, 9)
        acc = np.zeros_like(residual)
        h, w = residual.shape
        pad = int(np.abs(offs).max()) + 1
        p = np.pad(residual, pad, mode="symmetric")
        for dy, dx in offs:
            acc += p[pad + dy : pad + dy + h, pad + dx : pad + dx + w]
        acc /= len(offs)
        score = float(np.mean(acc**2))
        if score > best_score:
            best_score, best_theta = score, theta
    return best_theta


def remove_streaks(img: ImageBuffer, hi: float = 0.5, hi_soft: float = 0.15) -> ImageBuffer:
    """Directional median inpainting of bright rain streaks.

    The detector is calibrated to a residual band: responses above `hi` are
    treated as genuine scene structure and protected, so contrast changes
    applied before deraining can push streaks out of its working range.
    """
    arr = img.data
    lum = _luma(arr)
    residual = lum - gaussian_filter(lum, 2.5, mode="reflect")
    mask = np.clip((residual - 0.035) / 0.05, 0.0, 1.0)
    mask *= np.clip((hi - residual) / hi_soft, 0.0, 1.0)
    mask = gaussian_filter(mask, 0.8, mode="reflect")
    mask = np.clip(mask * 1.8, 0.0, 1.0)
    if not np.any(mask > 0.05):
        return img

    theta = estimate_streak_angle(arr)
    # median across the streak direction removes thin bright lines
    offs = _line_offsets(theta + math.pi / 2, 9)
    out = np.empty_like(arr)
    for c in range(3):
        med = kernels.footprint_median(arr[:, :, c], offs)
        out[:, :, c] = arr[:, :, c] * (1 - mask) + med * mask
    return _finish(out)


# --- dehazing --------------------------------------------------------------

def dehaze_dcp(img: ImageBuffer, omega: float = 0.95, t_floor: float = 0.15) -> ImageBuffer:
    """Dark-channel-prior dehazing with a single global transmission.

    The synthesis model uses constant transmission, so estimating one t
    (from the darkest windows after airlight normalization) avoids the
    spatial artifacts a per-pixel map would introduce.
    """
    arr = img.data
    dark = kernels.window_min(arr.min(axis=2), radius=5)

    # airlight: mean color of the brightest dark-channel decile
    cut = np.quantile(dark, 0.9)
    airlight = arr[dark >= cut].mean(axis=0)
    airlight = np.maximum(airlight, 0.35)  # avoid degenerate dark scenes

    norm_dark = kernels.window_min((arr / airlight[None, None, :]).min(axis=2), radius=5)
    t = max(1.0 - omega * float(np.quantile(norm_dark, 0.02)), t_floor)

    out = (arr - airlight[None, None, :]) / t + airlight[None, None, :]
    return _finish(out)


# --- low-light enhancement -------------------------------------------------

def lowlight_enhance(img: ImageBuffer) -> ImageBuffer:
    arr = img.data
    # inverse gamma then percentile stretch
    out = np.power(arr, 1.0 / 2.2)
    lo = np.quantile(out, 0.01)
    hi = np.quantile(out, 0.995)
    if hi - lo > 1e-3:
        out = (out - lo) / (hi - lo)
    return _finish(out)


# --- snow ------------------------------------------------------------------

_SNOW_RING = np.array(
    [(dy, dx) for dy in range(-4, 5) for dx in range(-4, 5) if 2 <= abs(dy) + abs(dx) <= 5],
    dtype=np.int64,
)


def desnow_inpaint(img: ImageBuffer) -> ImageBuffer:
    """Bright blob removal: ring-median residual mask, median inpainting."""
    from scipy.ndimage import grey_dilation

    arr = img.data
    lum = _luma(arr)
    residual = lum - kernels.footprint_median(lum, _SNOW_RING)
    mask = np.clip((residual - 0.18) / 0.06, 0.0, 1.0)
    mask = grey_dilation(mask, size=3)
    mask = gaussian_filter(mask, 0.7, mode="reflect")
    mask = np.clip(mask * 1.5, 0.0, 1.0)
    if not np.any(mask > 0.05):
        return img
    out = np.empty_like(arr)
    for c in range(3):
        med = kernels.footprint_median(arr[:, :, c], _SNOW_RING)
        out[:, :, c] = arr[:, :, c] * (1 - mask) + med * mask
    return _finish(out)
