"""Perfect-knowledge pixel-domain evasion attack.

The attacker holds the trained detector and edits a manipulated image,
one integer step per pixel at a time, until the pristine-side decision
value of the chosen target (the two-class model alone, or the full
composite) crosses the safety margin. Direction comes from a forward
difference of the target score per pixel: each candidate single-pixel
edit is priced exactly through incremental count updates (a pixel touches
at most four residual triples per direction), so no full image rescan is
needed per pixel. Each iteration moves the highest-sensitivity fraction
of pixels and commits only if the score strictly increases, halving the
fraction otherwise.

Color images are attacked on their V channel and re-embedded afterwards;
features only see V, and the re-embedding preserves it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgops import rgb_to_v, v_to_rgb
from .metrics import mse, pixel_change_fraction
from .pipeline import OneHalfClassModel, Prediction, predict_15c
from .raster import ensure_raster
from .spam import SpamConfig, SpamCounts, features_from_counts, spam_features
from .svm import decision_value, decision_values_fast

TWO_CLASS_TARGET = "2c"
COMPOSITE_TARGET = "15c"


@dataclass(frozen=True)
class AttackConfig:
    """Attack knobs: safety margin, per-iteration pixel budget, step size."""

    rho: float = 0.0
    pixel_fraction: float = 0.10
    step: int = 1
    max_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError(f"safety margin must be >= 0, got {self.rho}")
        if not 0 < self.pixel_fraction <= 1:
            raise ValueError(f"pixel_fraction must be in (0, 1], got {self.pixel_fraction}")
        if self.step < 1:
            raise ValueError(f"step must be a positive integer, got {self.step}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class AttackTarget:
    """What the attack ascends: d1 of the two-class model, or the composite f."""

    kind: str
    model: OneHalfClassModel

    def __post_init__(self):
        if self.kind not in (TWO_CLASS_TARGET, COMPOSITE_TARGET):
            raise ValueError(f"target kind must be {TWO_CLASS_TARGET!r} or {COMPOSITE_TARGET!r}")

    def score(self, features: np.ndarray) -> float:
        """Pristine-side decision value through the detector's own code path."""
        if self.kind == TWO_CLASS_TARGET:
            return decision_value(self.model.two_class, features)
        return predict_15c(self.model, features).f

    def scores_fast(self, X: np.ndarray) -> np.ndarray:
        """Bulk scoring for probe batches (throughput path, see svm module)."""
        if self.kind == TWO_CLASS_TARGET:
            return decision_values_fast(self.model.two_class, X)
        d = np.stack([
            decision_values_fast(self.model.two_class, X),
            decision_values_fast(self.model.oc_pristine, X),
            decision_values_fast(self.model.oc_manipulated, X),
        ], axis=1)
        return decision_values_fast(self.model.combiner, d)


@dataclass
class AttackResult:
    attacked: np.ndarray
    success: bool
    iterations: int
    mse: float
    pixel_change_fraction: float
    final_scores: Prediction
    stalled: bool = False


_PROBE_CHUNK = 4096


def _probe_scores(target: AttackTarget, counts: SpamCounts, delta: np.ndarray) -> np.ndarray:
    """Target scores of every single-pixel edit marked in ``delta`` (NaN elsewhere)."""
    n = delta.size
    flat = np.full(n, np.nan)
    todo = np.flatnonzero(delta.ravel())
    for s in range(0, len(todo), _PROBE_CHUNK):
        chunk = todo[s:s + _PROBE_CHUNK]
        mask = np.zeros(n, dtype=np.int32)
        mask[chunk] = delta.ravel()[chunk]
        pixels, probed = counts.probe_counts(mask.reshape(delta.shape))
        feats = features_from_counts(probed)
        flat[pixels] = target.scores_fast(feats)
    return flat


def pixel_gradient(target: AttackTarget, img: np.ndarray,
                   cfg: AttackConfig = AttackConfig(),
                   spam_cfg: SpamConfig = SpamConfig()) -> np.ndarray:
    """Per-pixel forward difference of the target score for a +step edit.

    Positive entries mean raising the pixel raises the score. Pixels that
    cannot move up by the full step (too close to 255) get zero, as do
    pixels whose edit leaves every truncated residual unchanged.
    """
    ensure_raster(img)
    channel = rgb_to_v(img)[0] if img.ndim == 3 else img
    counts = SpamCounts(channel, spam_cfg)
    delta = np.where(channel <= 255 - cfg.step, cfg.step, 0).astype(np.int32)
    base = float(target.scores_fast(counts.features()[None, :])[0])
    scores = _probe_scores(target, counts, delta)
    g = np.where(np.isnan(scores), 0.0, scores - base)
    return g.reshape(channel.shape)


def _candidate_order(gmap: np.ndarray, channel: np.ndarray, step: int) -> np.ndarray:
    """Flat pixel indices by descending |gradient|, movable pixels only."""
    g = gmap.ravel()
    vals = channel.ravel().astype(np.int32)
    movable = ((g > 0) & (vals <= 255 - step)) | ((g < 0) & (vals >= step))
    order = np.argsort(-np.abs(g), kind="stable")
    return order[movable[order]]


def attack_step(channel: np.ndarray, gmap: np.ndarray, cfg: AttackConfig,
                target: AttackTarget, cur_score: float,
                spam_cfg: SpamConfig = SpamConfig()) -> tuple[np.ndarray, float] | None:
    """One committed move, or None if stalled.

    Takes the pixel-budget-sized top slice of the sensitivity ranking,
    moves each pixel by one step toward ascent, and keeps the result only
    if the target score strictly increased; otherwise halves the budget
    and retries, down to a single pixel.
    """
    candidates = _candidate_order(gmap, channel, cfg.step)
    if len(candidates) == 0:
        return None
    k = max(1, int(round(cfg.pixel_fraction * channel.size)))
    k = min(k, len(candidates))
    g = gmap.ravel()
    while k >= 1:
        sel = candidates[:k]
        moved = channel.ravel().astype(np.int32)
        moved[sel] += np.where(g[sel] > 0, cfg.step, -cfg.step)
        moved = np.clip(moved, 0, 255).astype(np.uint8).reshape(channel.shape)
        new_score = target.score(spam_features(moved, spam_cfg))
        if new_score > cur_score:
            return moved, new_score
        k //= 2
    return None


def run_attack(target: AttackTarget, img: np.ndarray,
               cfg: AttackConfig = AttackConfig(),
               spam_cfg: SpamConfig = SpamConfig()) -> AttackResult:
    """Drive the image across the target's decision boundary.

    Iterates gradient estimation and committed steps until the pristine-
    side score exceeds the safety margin, the attack stalls, or the
    iteration cap is hit. An image already past the margin comes back
    unchanged and successful.
    """
    ensure_raster(img)
    original = img.copy()
    color = img.ndim == 3
    if color:
        channel, hs_state = rgb_to_v(img)
    else:
        channel, hs_state = img.copy(), None
    score = target.score(spam_features(channel, spam_cfg))
    iterations = 0
    stalled = False
    while score <= cfg.rho and iterations < cfg.max_iters:
        gmap = pixel_gradient(target, channel, cfg, spam_cfg)
        stepped = attack_step(channel, gmap, cfg, target, score, spam_cfg)
        if stepped is None:
            stalled = True
            break
        channel, score = stepped
        iterations += 1
    attacked = v_to_rgb(channel, hs_state) if color else channel
    final = predict_15c(target.model, spam_features(channel, spam_cfg))
    return AttackResult(
        attacked=attacked,
        success=score > cfg.rho,
        iterations=iterations,
        mse=mse(attacked, original),
        pixel_change_fraction=pixel_change_fraction(attacked, original),
        final_scores=final,
        stalled=stalled,
    )
