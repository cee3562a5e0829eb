"""Procedural clean test images.

Deterministic scenes with smooth gradients, soft shapes and mild texture;
enough structure for the metrics and tools to have signal without shipping
photo assets.
"""

from __future__ import annotations

import math

import numpy as np

from .image import ImageBuffer


def clean_image(seed: int, width: int = 128, height: int = 128) -> ImageBuffer:
    rng = np.random.Generator(np.random.Philox(key=seed))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yn, xn = yy / height, xx / width

    # smooth background gradient with random orientation per channel
    img = np.empty((height, width, 3), dtype=np.float64)
    for c in range(3):
        theta = rng.uniform(0, 2 * math.pi)
        base = rng.uniform(0.25, 0.6)
        amp = rng.uniform(0.1, 0.25)
        img[:, :, c] = base + amp * (np.cos(theta) * xn + np.sin(theta) * yn)

    # low-frequency waves for texture the blur/denoise tools can act on
    for _ in range(3):
        fx, fy = rng.uniform(2, 7, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.02, 0.07)
        wave = amp * np.sin(2 * math.pi * (fx * xn + fy * yn) + phase)
        img += wave[:, :, None] * rng.uniform(0.4, 1.0, size=3)

    # soft ellipses
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(height * 0.08, height * 0.3, size=2)
        color = rng.uniform(0.15, 0.85, size=3)
        d2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        m = np.clip(1.2 - d2, 0.0, 1.0) ** 2
        img = img * (1 - m[:, :, None] * 0.85) + color * m[:, :, None] * 0.85

    # a few hard rectangles for real edges
    for _ in range(rng.integers(1, 4)):
        y0 = int(rng.uniform(0, height * 0.8))
        x0 = int(rng.uniform(0, width * 0.8))
        hh = int(rng.uniform(height * 0.05, height * 0.25))
        ww = int(rng.uniform(width * 0.05, width * 0.25))
        color = rng.uniform(0.1, 0.9, size=3)
        img[y0 : y0 + hh, x0 : x0 + ww] = color

    # dark anchors (shadows); keeps the dark-channel prior well conditioned
    for _ in range(2):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry, rx = rng.uniform(height * 0.06, height * 0.16, size=2)
        d2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        m = np.clip(1.1 - d2, 0.0, 1.0) ** 2
        dark = rng.uniform(0.0, 0.06, size=3)
        img = img * (1 - m[:, :, None] * 0.95) + dark * m[:, :, None] * 0.95

    # light fine texture
    img += rng.normal(0.0, 0.004, size=img.shape)

    # keep a little headroom so additive degradations stay visible
    img = 0.04 + 0.92 * np.clip(img, 0.0, 1.0)
    return ImageBuffer.from_array(img, clamp=True)
