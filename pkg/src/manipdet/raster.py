"""Raster image representation and lossless file I/O.

Images are numpy arrays of dtype uint8: shape (H, W) for grayscale or
(H, W, 3) for RGB, row-major with interleaved channels. Every operator in
this package takes and returns arrays in this form; ``ensure_raster``
enforces the invariants at API boundaries.

Lossless formats supported for reading and writing: PNG and binary
PPM/PGM. JPEG is deliberately absent here; it only exists inside
``imgops.jpeg_cycle``.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

LOSSLESS_EXTENSIONS = (".png", ".ppm", ".pgm")


class RasterError(ValueError):
    """Raised when an array does not satisfy the raster invariants."""


def ensure_raster(img: np.ndarray) -> np.ndarray:
    """Validate raster invariants and return the array unchanged.

    Raises RasterError if the array is not uint8, not (H, W) or (H, W, 3),
    or has a zero-sized dimension.
    """
    if not isinstance(img, np.ndarray):
        raise RasterError(f"expected numpy array, got {type(img).__name__}")
    if img.dtype != np.uint8:
        raise RasterError(f"expected dtype uint8, got {img.dtype}")
    if img.ndim == 2:
        h, w = img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        h, w = img.shape[:2]
    else:
        raise RasterError(f"expected shape (H, W) or (H, W, 3), got {img.shape}")
    if h < 1 or w < 1:
        raise RasterError(f"empty image: shape {img.shape}")
    return img


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def to_raster(values: np.ndarray) -> np.ndarray:
    """Round a float array to the nearest integer, clip to [0, 255], cast to uint8."""
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG/PPM/PGM file into a raster array.

    Palette and grayscale-with-alpha inputs are converted; RGBA alpha is
    dropped. 16-bit inputs are rejected rather than silently rescaled.
    """
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "F"):
            raise RasterError(f"{path}: unsupported sample depth {im.mode!r}")
        if im.mode == "P":
            im = im.convert("RGB")
        elif im.mode == "LA":
            im = im.convert("L")
        elif im.mode == "RGBA":
            im = im.convert("RGB")
        arr = np.asarray(im)
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise RasterError(f"{path}: unsupported channel count {arr.shape[2]}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    return ensure_raster(np.ascontiguousarray(arr))


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write a raster array losslessly; the format follows the file extension."""
    ensure_raster(img)
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in LOSSLESS_EXTENSIONS:
        raise RasterError(f"refusing non-lossless extension {ext!r} (use one of {LOSSLESS_EXTENSIONS})")
    if ext == ".pgm" and img.ndim != 2:
        raise RasterError("PGM holds single-channel images only")
    if ext == ".ppm" and img.ndim != 3:
        raise RasterError("PPM holds 3-channel images only")
    Image.fromarray(img).save(path)
