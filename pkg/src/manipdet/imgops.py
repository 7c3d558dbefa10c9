"""Image manipulation operators and robustness post-processors.

Three manipulations produce the "processed" class: bicubic resizing
(zoom 1.3), 3x3 median filtering, and clip-limited adaptive histogram
equalization (clip 0.05). Median filtering and CL-AHE touch only the V
channel of color images (V = max(R, G, B)); resizing runs on each RGB
channel independently. Two post-processors model benign degradations:
additive Gaussian noise and a JPEG compression cycle.

All operators are pure functions: deterministic given (input, parameters,
seed), returning fresh uint8 arrays that satisfy the raster invariants.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .raster import ensure_raster, to_raster


def rgb_to_v(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an RGB image into its V channel and a color remainder.

    V is max(R, G, B) per pixel. The remainder holds per-channel ratios
    against V, which is exactly the information needed to rebuild the image
    with a modified V while preserving hue and saturation. Pass both parts
    to ``v_to_rgb`` to invert.
    """
    ensure_raster(img)
    if img.ndim != 3:
        raise ValueError("already grayscale: single-channel image has no V decomposition")
    v = img.max(axis=2)
    vf = v.astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.where(vf[:, :, None] > 0, img / vf[:, :, None], 1.0)
    return v, ratios


def v_to_rgb(v: np.ndarray, hs_state: np.ndarray) -> np.ndarray:
    """Rebuild an RGB image from a (possibly modified) V channel.

    Hue and saturation come from ``hs_state`` as produced by ``rgb_to_v``.
    Samples are rounded once and clipped to [0, 255].
    """
    ensure_raster(v)
    if v.ndim != 2:
        raise ValueError("V channel must be single-channel")
    if hs_state.shape != v.shape + (3,):
        raise ValueError(f"dimension mismatch: V {v.shape} vs color remainder {hs_state.shape}")
    return to_raster(hs_state * v.astype(np.float64)[:, :, None])


def _apply_on_v(img: np.ndarray, op) -> np.ndarray:
    """Run a single-channel operator on the V channel of a color image."""
    if img.ndim == 2:
        return op(img)
    v, hs = rgb_to_v(img)
    return v_to_rgb(op(v), hs)


# --- bicubic resampling (Catmull-Rom kernel, a = -0.5) ---

def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    at = np.abs(t)
    near = (1.5 * at - 2.5) * at * at + 1.0
    far = ((-0.5 * at + 2.5) * at - 4.0) * at + 2.0
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


def _resample_axis0(arr: np.ndarray, out_len: int, scale: float) -> np.ndarray:
    n = arr.shape[0]
    src = (np.arange(out_len) + 0.5) / scale - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    out = np.zeros((out_len,) + arr.shape[1:], dtype=np.float64)
    for k in range(4):
        idx = np.clip(base - 1 + k, 0, n - 1)
        w = _cubic_kernel(frac - (k - 1))
        out += w.reshape((-1,) + (1,) * (arr.ndim - 1)) * arr[idx]
    return out


def resize_bicubic(img: np.ndarray, scale: float) -> np.ndarray:
    """Resample an image by ``scale`` with 4x4 bicubic interpolation.

    Uses the Catmull-Rom kernel with center-aligned coordinates, so
    scale 1.0 is pixel-identical to the input. Border taps replicate the
    edge sample. Color images are resampled channel by channel.
    """
    ensure_raster(img)
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    h, w = img.shape[:2]
    out_h, out_w = int(round(h * scale)), int(round(w * scale))
    if out_h < 1 or out_w < 1:
        raise ValueError(f"scale {scale} yields empty output for {h}x{w} input")
    vals = img.astype(np.float64)
    vals = _resample_axis0(vals, out_h, scale)
    vals = np.swapaxes(_resample_axis0(np.swapaxes(vals, 0, 1), out_w, scale), 0, 1)
    return to_raster(vals)


def median_filter_v(img: np.ndarray, window: int = 3) -> np.ndarray:
    """Median-filter the V channel with a square window (edge replication)."""
    ensure_raster(img)
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")

    def op(v):
        return ndimage.median_filter(v, size=window, mode="nearest")

    return _apply_on_v(img, op)


# --- clip-limited adaptive histogram equalization ---

def _tile_edges(length: int, count: int) -> list[int]:
    return [(k * length) // count for k in range(count + 1)]


def _clahe_tile_map(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) <= 1:
        return np.arange(256, dtype=np.float64)
    n = float(tile.size)
    limit = clip_limit * n
    excess = np.maximum(hist - limit, 0.0).sum()
    hist = np.minimum(hist, limit) + excess / 256.0
    cdf = np.cumsum(hist) / n
    return 255.0 * cdf


def _blend_coords(length: int, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    coords = np.arange(length, dtype=np.float64)
    lo = np.clip(np.searchsorted(centers, coords, side="right") - 1, 0, len(centers) - 1)
    hi = np.minimum(lo + 1, len(centers) - 1)
    left, right = centers[lo], centers[hi]
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(right > left, (coords - left) / (right - left), 0.0)
    return lo, hi, np.clip(w, 0.0, 1.0)


def cl_ahe_v(img: np.ndarray, clip_limit: float = 0.05, tiles: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Contrast-limit equalize the V channel over a tile grid.

    Each tile's histogram is clipped at ``clip_limit`` times the tile pixel
    count with the excess spread uniformly over all 256 bins, then turned
    into an equalization map; per-pixel outputs blend the four surrounding
    tile maps bilinearly. Tiles whose histogram has a single occupied bin
    map to identity.
    """
    ensure_raster(img)
    if not 0.0 < clip_limit <= 1.0:
        raise ValueError(f"clip_limit must be in (0, 1], got {clip_limit}")
    ty, tx = tiles
    if ty < 1 or tx < 1:
        raise ValueError(f"tile grid must be at least 1x1, got {tiles}")

    def op(v):
        h, w = v.shape
        if ty > h or tx > w:
            raise ValueError(f"tile grid {tiles} exceeds image size {h}x{w}")
        row_edges = _tile_edges(h, ty)
        col_edges = _tile_edges(w, tx)
        maps = np.empty((ty, tx, 256), dtype=np.float64)
        rc = np.empty(ty)
        cc = np.empty(tx)
        for a in range(ty):
            rc[a] = (row_edges[a] + row_edges[a + 1] - 1) / 2.0
            for b in range(tx):
                cc[b] = (col_edges[b] + col_edges[b + 1] - 1) / 2.0
                maps[a, b] = _clahe_tile_map(
                    v[row_edges[a]:row_edges[a + 1], col_edges[b]:col_edges[b + 1]], clip_limit
                )
        rlo, rhi, wr = _blend_coords(h, rc)
        clo, chi, wc = _blend_coords(w, cc)
        rlo, rhi, wr = rlo[:, None], rhi[:, None], wr[:, None]
        clo, chi, wc = clo[None, :], chi[None, :], wc[None, :]
        m00 = maps[rlo, clo, v]
        m01 = maps[rlo, chi, v]
        m10 = maps[rhi, clo, v]
        m11 = maps[rhi, chi, v]
        a = (1.0 - wr) * (1.0 - wc)
        b = (1.0 - wr) * wc
        c = wr * (1.0 - wc)
        d = wr * wc
        return to_raster(a * m00 + b * m01 + c * m10 + d * m11)

    return _apply_on_v(img, op)


# --- robustness post-processors ---

def add_gaussian_noise(img: np.ndarray, variance: float, seed: int) -> np.ndarray:
    """Add zero-mean Gaussian noise with variance given on the [0, 1] scale.

    Samples become round(clip(s + 255 * n)) with n ~ N(0, variance);
    bit-identical outputs for identical seeds.
    """
    ensure_raster(img)
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(img.shape) * np.sqrt(variance)
    return to_raster(img.astype(np.float64) + 255.0 * noise)


def jpeg_cycle(img: np.ndarray, qf: int) -> np.ndarray:
    """Compress with a baseline JPEG codec at quality ``qf`` and decode back."""
    ensure_raster(img)
    if not 1 <= qf <= 100:
        raise ValueError(f"JPEG quality must be in [1, 100], got {qf}")
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="JPEG", quality=int(qf))
    buf.seek(0)
    with Image.open(buf) as im:
        decoded = np.asarray(im.convert("RGB" if img.ndim == 3 else "L"))
    return ensure_raster(np.ascontiguousarray(decoded))


def subsample_no_interp(img: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Decimate to target size by taking nearest source samples, no filtering."""
    ensure_raster(img)
    h, w = img.shape[:2]
    if target_h > h or target_w > w:
        raise ValueError(f"target {target_w}x{target_h} exceeds source {w}x{h}")
    if target_h < 1 or target_w < 1:
        raise ValueError("target size must be at least 1x1")
    rows = (np.arange(target_h) * h) // target_h
    cols = (np.arange(target_w) * w) // target_w
    return np.ascontiguousarray(img[rows][:, cols])


# --- manipulation dispatch ---

RESIZE = "resize"
MEDIAN = "median"
CLAHE = "clahe"
MANIPULATION_KINDS = (RESIZE, MEDIAN, CLAHE)


@dataclass(frozen=True)
class ManipulationSpec:
    """One manipulation operator with its parameters.

    Defaults: resize scale 1.3, median window 3, CL-AHE clip limit 0.05
    on an 8x8 tile grid.
    """

    kind: str
    scale: float = 1.3
    window: int = 3
    clip_limit: float = 0.05
    tiles: tuple[int, int] = (8, 8)

    def __post_init__(self):
        if self.kind not in MANIPULATION_KINDS:
            raise ValueError(f"unknown manipulation {self.kind!r}, expected one of {MANIPULATION_KINDS}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if not 0.0 < self.clip_limit <= 1.0:
            raise ValueError(f"clip_limit must be in (0, 1], got {self.clip_limit}")


def apply_manipulation(img: np.ndarray, spec: ManipulationSpec) -> np.ndarray:
    if spec.kind == RESIZE:
        return resize_bicubic(img, spec.scale)
    if spec.kind == MEDIAN:
        return median_filter_v(img, spec.window)
    return cl_ahe_v(img, spec.clip_limit, spec.tiles)
