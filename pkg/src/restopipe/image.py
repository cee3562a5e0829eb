"""RGB image buffers and lossless PNG I/O.

Images are carried through the whole system as immutable float arrays in
[0, 1] so degradation and restoration math composes without quantization;
bytes only appear at load/save time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptData, DimensionMismatch, UnsupportedFormat

MIN_SIDE = 16  # windowed metrics need room


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Immutable RGB image, shape (height, width, 3), float64 in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = self.data
        if not isinstance(arr, np.ndarray) or arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("ImageBuffer expects an (H, W, 3) array")
        if arr.dtype != np.float64:
            raise ValueError("ImageBuffer expects float64 data")
        if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
            raise ValueError(f"image sides must be >= {MIN_SIDE}, got {arr.shape[:2]}")
        if not arr.flags.c_contiguous:
            raise ValueError("ImageBuffer expects C-contiguous data")
        mn, mx = float(arr.min()), float(arr.max())
        if mn < 0.0 or mx > 1.0:
            raise ValueError(f"intensities outside [0, 1]: min={mn}, max={mx}")
        arr.flags.writeable = False

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3

    @classmethod
    def from_array(cls, arr: np.ndarray, clamp: bool = False) -> "ImageBuffer":
        """Build a buffer from any float array, copying and optionally clamping.

        Producers of new pixel data are expected to pass clamp=True; passing
        out-of-range data without clamp raises.
        """
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if clamp:
            arr = np.clip(arr, 0.0, 1.0)
        else:
            arr = arr.copy()
        return cls(arr)

    def to_array(self) -> np.ndarray:
        """Writable copy of the pixel data."""
        return self.data.copy()

    def same_pixels(self, other: "ImageBuffer") -> bool:
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )


def require_same_shape(a: ImageBuffer, b: ImageBuffer) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionMismatch(f"shape {a.data.shape} vs {b.data.shape}")


def load_image(path: str | os.PathLike) -> ImageBuffer:
    """Load an 8-bit RGB or grayscale PNG; grayscale is replicated to RGB.

    Raises FileNotFoundError, UnsupportedFormat (non-PNG, >8-bit, alpha or
    palette) or CorruptData.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise UnsupportedFormat(f"expected PNG, got {im.format}")
            if im.mode not in ("RGB", "L"):
                raise UnsupportedFormat(f"unsupported PNG mode {im.mode!r} (8-bit RGB or L only)")
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise CorruptData(f"cannot parse {path}: {exc}") from exc
    except OSError as exc:
        raise CorruptData(f"truncated or unreadable PNG {path}: {exc}") from exc
    data = arr.astype(np.float64) / 255.0
    return ImageBuffer.from_array(data)


def save_image(img: ImageBuffer, path: str | os.PathLike) -> None:
    """Write an 8-bit RGB PNG. Bytes are round(intensity * 255), half away from zero."""
    path = os.fspath(path)
    # floor(x + 0.5) == round-half-away-from-zero for non-negative x
    bytes_ = np.floor(img.data * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(bytes_, mode="RGB").save(path, format="PNG")
