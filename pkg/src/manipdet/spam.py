"""SPAM features: second-order transition statistics of truncated pixel residuals.

First-order residuals are taken along eight directions (horizontal,
vertical and the two diagonals, each in both orientations), truncated at
T, and summarized by the empirical transition probabilities of residual
triples along each direction. Averaging the four horizontal/vertical
tensors and the four diagonal tensors and concatenating them yields the
feature vector: 2 * (2T+1)^3 entries, 686 at the default T=3.

Features are computed on single-channel images; for color inputs extract
the V channel first (see ``imgops.rgb_to_v``). ``SpamCounts`` keeps the
per-direction count tensors of one image and can price single-pixel edits
against them without rescanning the image, which is what the pixel-domain
attack builds on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .raster import ensure_raster

# Direction vectors (row step, column step): the residual at (i, j) is
# img[i, j] - img[i + di, j + dj], and triples advance by the same step.
HV_DIRECTIONS = ((0, 1), (0, -1), (-1, 0), (1, 0))
DIAGONAL_DIRECTIONS = ((1, 1), (-1, -1), (1, -1), (-1, 1))
DIRECTIONS = HV_DIRECTIONS + DIAGONAL_DIRECTIONS


@dataclass(frozen=True)
class SpamConfig:
    """Feature extraction parameters; T is the residual truncation threshold."""

    T: int = 3

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"truncation threshold must be >= 1, got {self.T}")

    @property
    def levels(self) -> int:
        return 2 * self.T + 1

    @property
    def dim(self) -> int:
        return 2 * self.levels ** 3


@dataclass(frozen=True)
class ResidualField:
    """First-order residuals along one direction.

    ``values`` covers the rectangle of image positions where the residual
    is defined; stepping by ``direction`` inside it follows the scan order.
    """

    direction: tuple[int, int]
    values: np.ndarray


def _valid_rect(shape: tuple[int, int], di: int, dj: int, span: int) -> tuple[int, int, int, int]:
    """Index rectangle where positions (i + k*di, j + k*dj), k=0..span are all in bounds."""
    h, w = shape
    r0 = max(0, -span * di) if di < 0 else 0
    r1 = h - span * di if di > 0 else h
    c0 = max(0, -span * dj) if dj < 0 else 0
    c1 = w - span * dj if dj > 0 else w
    return r0, r1, c0, c1


def residuals(channel: np.ndarray, direction: tuple[int, int]) -> ResidualField:
    """First-order difference field along ``direction`` for a 1-channel image."""
    ensure_raster(channel)
    if channel.ndim != 2:
        raise ValueError("residuals operate on single-channel images")
    di, dj = direction
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction}")
    h, w = channel.shape
    if (di != 0 and h < 3) or (dj != 0 and w < 3):
        raise ValueError(f"image {h}x{w} too small along direction {direction}")
    a = channel.astype(np.int16)
    r0, r1, c0, c1 = _valid_rect(channel.shape, di, dj, 1)
    vals = a[r0:r1, c0:c1] - a[r0 + di:r1 + di, c0 + dj:c1 + dj]
    return ResidualField(direction, vals)


def truncate(field: ResidualField, T: int) -> ResidualField:
    """Clamp residual values to [-T, T]."""
    if T < 1:
        raise ValueError(f"truncation threshold must be >= 1, got {T}")
    return ResidualField(field.direction, np.clip(field.values, -T, T))


def _triple_codes(values: np.ndarray, direction: tuple[int, int], T: int) -> np.ndarray:
    """Flat codes of all residual triples along the scan direction."""
    di, dj = direction
    levels = 2 * T + 1
    h, w = values.shape
    if (di != 0 and h < 3) or (dj != 0 and w < 3):
        raise ValueError(f"residual field {h}x{w} has no triples along {direction}")
    r0, r1, c0, c1 = _valid_rect(values.shape, di, dj, 2)
    u = values[r0:r1, c0:c1].astype(np.int64)
    v = values[r0 + di:r1 + di, c0 + dj:c1 + dj]
    w_ = values[r0 + 2 * di:r1 + 2 * di, c0 + 2 * dj:c1 + 2 * dj]
    return ((u + T) * levels + (v + T)) * levels + (w_ + T)


def transition_tensor(field: ResidualField, T: int) -> np.ndarray:
    """Empirical transition probabilities P(next | prev two) of residual triples.

    Returns a (2T+1, 2T+1, 2T+1) tensor indexed [u, v, w]; rows (u, v)
    with no observed triples are all zero. The field must already be
    truncated at T.
    """
    vals = field.values
    if vals.min() < -T or vals.max() > T:
        raise ValueError(f"field not truncated at T={T}")
    counts = _count_tensor(vals, field.direction, T)
    return _normalize_counts(counts)


def _count_tensor(values: np.ndarray, direction: tuple[int, int], T: int) -> np.ndarray:
    levels = 2 * T + 1
    codes = _triple_codes(values, direction, T)
    return np.bincount(codes.ravel(), minlength=levels ** 3).reshape(levels, levels, levels).astype(np.int64)


def _normalize_counts(counts: np.ndarray) -> np.ndarray:
    """Row-normalize count tensors over the last axis; zero rows stay zero.

    Works on any leading batch shape; the arithmetic is identical for
    batched and single tensors, so results are bit-for-bit reproducible
    either way.
    """
    row_sums = counts.sum(axis=-1, keepdims=True)
    out = np.zeros(counts.shape, dtype=np.float64)
    np.divide(counts, row_sums, out=out, where=row_sums > 0)
    return out


def count_tensors(channel: np.ndarray, cfg: SpamConfig = SpamConfig()) -> np.ndarray:
    """Raw triple-count tensors for all 8 directions, shape (8, L, L, L)."""
    ensure_raster(channel)
    if channel.ndim != 2:
        raise ValueError("SPAM features operate on single-channel images")
    h, w = channel.shape
    if h < 4 or w < 4:
        raise ValueError(f"image {h}x{w} too small for triple statistics (needs >= 4x4)")
    a = channel.astype(np.int16)
    levels = cfg.levels
    out = np.empty((8,) + (levels,) * 3, dtype=np.int64)
    for d_idx, (di, dj) in enumerate(DIRECTIONS):
        r0, r1, c0, c1 = _valid_rect(channel.shape, di, dj, 1)
        vals = a[r0:r1, c0:c1] - a[r0 + di:r1 + di, c0 + dj:c1 + dj]
        out[d_idx] = _count_tensor(np.clip(vals, -cfg.T, cfg.T), (di, dj), cfg.T)
    return out


def features_from_counts(counts: np.ndarray) -> np.ndarray:
    """Assemble the feature vector from count tensors.

    ``counts`` has shape (..., 8, L, L, L); the result has shape
    (..., 2*L**3): normalized horizontal/vertical average first, then the
    diagonal average. The summation order is fixed so batched and
    single-image calls agree bit-for-bit.
    """
    m = _normalize_counts(counts)
    flat = m.reshape(m.shape[:-3] + (-1,))
    hv = ((flat[..., 0, :] + flat[..., 1, :]) + (flat[..., 2, :] + flat[..., 3, :])) / 4.0
    dg = ((flat[..., 4, :] + flat[..., 5, :]) + (flat[..., 6, :] + flat[..., 7, :])) / 4.0
    return np.concatenate([hv, dg], axis=-1)


def spam_features(channel: np.ndarray, cfg: SpamConfig = SpamConfig()) -> np.ndarray:
    """Feature vector of a single-channel image (length 686 at T=3)."""
    return features_from_counts(count_tensors(channel, cfg))


class SpamCounts:
    """Count-tensor bookkeeping for one image, supporting cheap pixel probes.

    Holds the raw residual fields and count tensors of a single channel.
    ``probe_counts`` prices a batch of candidate single-pixel edits by
    updating only the triples that touch each edited pixel (at most four
    per direction), producing for every candidate the exact count tensors
    of the edited image without rescanning it.
    """

    # Which triple slots (anchor, anchor+e, anchor+2e) move when the pixel
    # itself (+1) or its upstream neighbour (-1) changes, per anchor offset k.
    _SLOT_COEFFS = ((1, 0, 0), (-1, 1, 0), (0, -1, 1), (0, 0, -1))

    def __init__(self, channel: np.ndarray, cfg: SpamConfig = SpamConfig()):
        ensure_raster(channel)
        if channel.ndim != 2:
            raise ValueError("SpamCounts operates on single-channel images")
        self.cfg = cfg
        self.shape = channel.shape
        self.channel = channel.copy()
        self._rebuild()

    def _rebuild(self):
        a = self.channel.astype(np.int32)
        h, w = self.shape
        self.counts = count_tensors(self.channel, self.cfg)
        # Full-size raw residual planes; entries outside the valid rectangle
        # are never read (masked through _anchor_valid).
        self._diffs = np.zeros((8, h, w), dtype=np.int32)
        self._anchor_valid = np.zeros((8, h, w), dtype=bool)
        for d_idx, (di, dj) in enumerate(DIRECTIONS):
            r0, r1, c0, c1 = _valid_rect(self.shape, di, dj, 1)
            self._diffs[d_idx, r0:r1, c0:c1] = a[r0:r1, c0:c1] - a[r0 + di:r1 + di, c0 + dj:c1 + dj]
            ar0, ar1, ac0, ac1 = _valid_rect(self.shape, di, dj, 3)
            self._anchor_valid[d_idx, ar0:ar1, ac0:ac1] = True

    def features(self) -> np.ndarray:
        return features_from_counts(self.counts)

    def set_channel(self, channel: np.ndarray):
        """Replace the image (after a committed multi-pixel step) and recount."""
        if channel.shape != self.shape:
            raise ValueError("channel shape changed")
        self.channel = channel.copy()
        self._rebuild()

    @staticmethod
    def _shift(plane: np.ndarray, si: int, sj: int, fill):
        """plane[i - si, j - sj] with out-of-range reads replaced by fill."""
        h, w = plane.shape
        out = np.full((h, w), fill, dtype=plane.dtype)
        dst_r = slice(max(0, si), h + min(0, si))
        dst_c = slice(max(0, sj), w + min(0, sj))
        src_r = slice(max(0, -si), h + min(0, -si))
        src_c = slice(max(0, -sj), w + min(0, -sj))
        out[dst_r, dst_c] = plane[src_r, src_c]
        return out

    def probe_counts(self, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact count tensors after changing each probed pixel by its ``delta``.

        ``delta`` is an (H, W) integer array; nonzero entries mark probed
        pixels. Returns (pixels, tensors): the flat indices of the probed
        pixels and, for each, the int32 count tensors (shape
        (n_probe, 8, L, L, L)) that ``count_tensors`` would produce for the
        image with only that pixel changed by its delta. Deltas must keep
        samples inside [0, 255].
        """
        if delta.shape != self.shape:
            raise ValueError("delta shape mismatch")
        T = self.cfg.T
        levels = self.cfg.levels
        n = self.shape[0] * self.shape[1]
        flat_delta = delta.astype(np.int32).ravel()
        probe = np.flatnonzero(flat_delta)
        row_of = np.full(n, -1, dtype=np.int64)
        row_of[probe] = np.arange(len(probe))
        out = np.tile(self.counts.reshape(1, 8, -1).astype(np.int32), (len(probe), 1, 1))
        for d_idx, (di, dj) in enumerate(DIRECTIONS):
            diffs = self._diffs[d_idx]
            valid = self._anchor_valid[d_idx]
            for k, coeffs in enumerate(self._SLOT_COEFFS):
                # Anchor of the k-th affected triple sits k steps upstream
                # of the probed pixel.
                si, sj = k * di, k * dj
                anchor_ok = self._shift(valid, si, sj, False).ravel() & (flat_delta != 0)
                if not anchor_ok.any():
                    continue
                slots = []
                slots_new = []
                for s, coeff in enumerate(coeffs):
                    raw = self._shift(diffs, si - s * di, sj - s * dj, 0).ravel()
                    slots.append(np.clip(raw, -T, T))
                    slots_new.append(np.clip(raw + coeff * flat_delta, -T, T))
                old_code = ((slots[0] + T) * levels + (slots[1] + T)) * levels + (slots[2] + T)
                new_code = ((slots_new[0] + T) * levels + (slots_new[1] + T)) * levels + (slots_new[2] + T)
                moved = anchor_ok & (old_code != new_code)
                if not moved.any():
                    continue
                rows = row_of[np.flatnonzero(moved)]
                out[rows, d_idx, old_code[moved]] -= 1
                out[rows, d_idx, new_code[moved]] += 1
        return probe, out.reshape((len(probe), 8) + (levels,) * 3)


# --- feature persistence ---
# One CSV row per image: source_id, label, then the feature values in
# documented order (horizontal/vertical tensor flattened with u varying
# slowest, then v, then w; the diagonal tensor follows). Values are written
# with repr so the roundtrip is exact.

def write_feature_csv(path, ids, X: np.ndarray, labels) -> None:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(ids) != X.shape[0] or len(labels) != X.shape[0]:
        raise ValueError("ids, labels and feature rows must align")
    header = ["source_id", "label"] + [f"f{k:03d}" for k in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for sid, label, row in zip(ids, labels, X):
            writer.writerow([sid, int(label)] + [repr(float(v)) for v in row])


def read_feature_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["source_id", "label"]:
            raise ValueError(f"{path}: not a feature CSV")
        dim = len(header) - 2
        ids, labels, rows = [], [], []
        for rec in reader:
            if len(rec) != dim + 2:
                raise ValueError(f"{path}: row for {rec[0] if rec else '?'} has {len(rec) - 2} values, expected {dim}")
            ids.append(rec[0])
            labels.append(int(rec[1]))
            rows.append([float(v) for v in rec[2:]])
    X = np.array(rows, dtype=np.float64).reshape(len(ids), dim)
    return ids, X, np.array(labels, dtype=np.int64)
