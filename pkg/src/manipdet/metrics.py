"""Evaluation metrics: ROC/AUC, threshold accuracy, image distortion measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RocCurve:
    """ROC points (false-positive rate, true-positive rate) and their AUC.

    Points are swept over the unique scores from the highest threshold
    down, so both coordinates are non-decreasing.
    """

    points: tuple[tuple[float, float], ...]
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve and trapezoidal AUC for binary labels (+1 positive).

    Equal scores collapse into a single threshold. The trapezoid areas are
    accumulated in integer counts, so the result is exact and identical to
    pair counting (Mann-Whitney) including tie handling.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels > 0
    n_pos = int(pos.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    p_sorted = pos[order]
    tp = fp = 0
    area2 = 0  # twice the area in count units, exact integer
    points = [(0.0, 0.0)]
    i = 0
    n = len(scores)
    while i < n:
        j = i
        d_tp = d_fp = 0
        while j < n and s_sorted[j] == s_sorted[i]:
            if p_sorted[j]:
                d_tp += 1
            else:
                d_fp += 1
            j += 1
        area2 += d_fp * (2 * tp + d_tp)
        tp += d_tp
        fp += d_fp
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return RocCurve(tuple(points), area2 / (2 * n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.0) -> float:
    """Fraction of samples whose sign against the threshold matches the label."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) == 0:
        raise ValueError("no samples")
    predicted = np.where(scores >= threshold, 1, -1)
    truth = np.where(labels > 0, 1, -1)
    return float((predicted == truth).mean())


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared sample difference on the 0..255 scale."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float((d * d).mean())


def pixel_change_fraction(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of pixel positions whose value differs in any channel."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a != b
    if diff.ndim == 3:
        diff = diff.any(axis=2)
    return float(diff.mean())
