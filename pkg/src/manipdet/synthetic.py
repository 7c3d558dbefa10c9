"""Synthetic uncompressed corpus for desk-scale experiments.

Each image is a smooth random background plus fine sensor-like grain, so
residual statistics resemble camera-native content: manipulation
operators leave detectable traces (resampling correlates the grain,
median filtering suppresses it, equalization rescales local contrast)
while benign post-processing keeps images close to their class.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

from .raster import save_image, to_raster


def synthetic_pristine(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """One grayscale camera-like image: smooth structure plus grain."""
    nodes = int(rng.integers(4, 9))
    coarse = rng.uniform(0.0, 1.0, size=(nodes, nodes))
    zoom = (height / nodes, width / nodes)
    background = ndimage.zoom(coarse, zoom, order=3, mode="nearest", grid_mode=True)
    background = background[:height, :width]
    lo = rng.uniform(30.0, 70.0)
    hi = rng.uniform(160.0, 220.0)
    span = background.max() - background.min()
    if span > 0:
        background = lo + (background - background.min()) * (hi - lo) / span
    else:
        background = np.full((height, width), (lo + hi) / 2.0)
    grain_sigma = rng.uniform(2.5, 5.0)
    grain = rng.standard_normal((height, width)) * grain_sigma
    return to_raster(background + grain)


def generate_corpus(out_dir, count: int, height: int = 64, width: int = 64,
                    seed: int = 0) -> list[str]:
    """Write ``count`` pristine PNGs into ``out_dir``; returns their ids."""
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for k in range(count):
        img_id = f"syn{k:05d}"
        save_image(synthetic_pristine(rng, height, width), os.path.join(out_dir, img_id + ".png"))
        ids.append(img_id)
    return ids
