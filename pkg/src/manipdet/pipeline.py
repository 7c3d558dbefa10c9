"""Dataset splits, hyperparameter search, and the composed 1.5-class detector.

The detector stacks four RBF SVMs: a two-class classifier trained on both
classes, one-class classifiers trained on pristine and on manipulated
samples, and a final one-class combiner that reads the three decision
values (a 3-vector) and is trained on pristine outputs only. Pristine
samples carry label +1 throughout; the pristine side of every decision
function is positive except for the manipulated-class one-class model,
whose positive side means manipulated.

Hyperparameters come from exhaustive grid search: the two-class grid is
scored by v-fold cross-validated mean error with equal false-alarm and
miss weights, the one-class grids by training on the full home-class set
and scoring a weighted error (alpha * P_fa + beta * P_md) on a held-out
validation set, with miss errors weighted more heavily to keep the
pristine acceptance regions tight.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import svm
from .svm import (HyperParams, MANIPULATED, PRISTINE, SvmModel,
                  decision_values, load_model, save_model, train_one_class,
                  train_two_class)

LABEL_PRISTINE = 1
LABEL_MANIPULATED = -1


class StageError(RuntimeError):
    """Training-stage failure, tagged with the stage that broke."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


# --- dataset splits ---

@dataclass(frozen=True)
class SplitSizes:
    """Target sizes for the five splits; a None test size absorbs the rest."""

    s_v: int
    s_tr: int
    s_t_v: int
    s_t_tr: int
    s_t_t: int | None = None


PAPER_SPLIT_SIZES = SplitSizes(1000, 5000, 300, 700, 997)


def scaled_split_sizes(factor: float) -> SplitSizes:
    """Paper-proportioned sizes scaled by one factor; the final test split floats."""
    if factor <= 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return SplitSizes(
        round(PAPER_SPLIT_SIZES.s_v * factor),
        round(PAPER_SPLIT_SIZES.s_tr * factor),
        round(PAPER_SPLIT_SIZES.s_t_v * factor),
        round(PAPER_SPLIT_SIZES.s_t_tr * factor),
        None,
    )


@dataclass(frozen=True)
class DatasetSplits:
    """Disjoint image-id lists; the last three partition the test pool."""

    s_v: tuple[str, ...]
    s_tr: tuple[str, ...]
    s_t_v: tuple[str, ...]
    s_t_tr: tuple[str, ...]
    s_t_t: tuple[str, ...]

    @property
    def s_t(self) -> tuple[str, ...]:
        return self.s_t_v + self.s_t_tr + self.s_t_t

    def as_dict(self) -> dict[str, list[str]]:
        return {k: list(getattr(self, k)) for k in ("s_v", "s_tr", "s_t_v", "s_t_tr", "s_t_t")}


def make_splits(corpus_ids, sizes: SplitSizes, seed: int) -> DatasetSplits:
    """Assign every corpus id to exactly one split, uniformly at random.

    Deterministic for a given seed regardless of the incoming id order.
    """
    ids = sorted(str(i) for i in corpus_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("corpus ids must be unique")
    counts = [sizes.s_v, sizes.s_tr, sizes.s_t_v, sizes.s_t_tr]
    if any(c < 1 for c in counts):
        raise ValueError(f"split sizes must be positive, got {sizes}")
    head = sum(counts)
    if sizes.s_t_t is None:
        remainder = len(ids) - head
        if remainder < 1:
            raise ValueError(f"corpus of {len(ids)} images too small for sizes {sizes}")
        counts.append(remainder)
    else:
        if sizes.s_t_t < 1:
            raise ValueError("final test split must be positive")
        counts.append(sizes.s_t_t)
        if head + sizes.s_t_t != len(ids):
            raise ValueError(
                f"split sizes sum to {head + sizes.s_t_t} but corpus has {len(ids)} images; "
                "splits must cover the corpus exactly"
            )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    shuffled = [ids[k] for k in perm]
    parts = []
    at = 0
    for c in counts:
        parts.append(tuple(shuffled[at:at + c]))
        at += c
    return DatasetSplits(*parts)


# --- error weighting ---

@dataclass(frozen=True)
class ErrorWeights:
    """Weights for false alarms (alpha) and missed detections (beta)."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.beta < 1):
            raise ValueError(f"weights must lie in (0, 1), got {self}")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {self.alpha + self.beta}")


EQUAL_WEIGHTS = ErrorWeights(0.5, 0.5)
INTERMEDIATE_WEIGHTS = ErrorWeights(0.2, 0.8)
COMBINER_WEIGHTS = ErrorWeights(0.1, 0.9)


@dataclass(frozen=True)
class ErrorRates:
    p_fa: float
    p_md: float


def weighted_error(rates: ErrorRates, w: ErrorWeights) -> float:
    return w.alpha * rates.p_fa + w.beta * rates.p_md


def error_rates(scores, labels, positive_meaning: str) -> ErrorRates:
    """Empirical false-alarm and miss rates at threshold 0.

    Labels are +1 pristine / -1 manipulated; a score >= 0 predicts the
    class named by ``positive_meaning``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pristine = labels > 0
    if not pristine.any() or pristine.all():
        raise ValueError("need both classes to estimate error rates")
    predicted_pristine = (scores >= 0) if positive_meaning == PRISTINE else (scores < 0)
    p_fa = float((~predicted_pristine[pristine]).mean())
    p_md = float(predicted_pristine[~pristine].mean())
    return ErrorRates(p_fa, p_md)


# --- hyperparameter grids ---

@dataclass(frozen=True)
class GridConfig:
    """Candidate regularization and gamma values, plus the CV fold count."""

    c_or_nu_grid: tuple[float, ...]
    gamma_grid: tuple[float, ...]
    folds: int = 5

    def __post_init__(self):
        if not self.c_or_nu_grid or not self.gamma_grid:
            raise ValueError("grids must be non-empty")
        if self.folds < 2:
            raise ValueError(f"cross-validation needs >= 2 folds, got {self.folds}")


def two_class_default_grid() -> GridConfig:
    return GridConfig(
        tuple(2.0 ** e for e in range(-5, 16, 2)),
        tuple(2.0 ** e for e in range(-15, 4, 2)),
        folds=5,
    )


def one_class_default_grid() -> GridConfig:
    # nu cells above 1 are infeasible for the nu-formulation and are skipped.
    return GridConfig(
        tuple(2.0 ** e for e in range(-10, 1)),
        tuple(2.0 ** e for e in range(-10, 11)),
    )


def _cv_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Deterministic stratified fold assignment."""
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    for cls in (LABEL_PRISTINE, LABEL_MANIPULATED):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < folds:
            raise ValueError(f"class {cls} has {len(idx)} samples, fewer than {folds} folds")
        perm = rng.permutation(len(idx))
        assignment[idx[perm]] = np.arange(len(idx)) % folds
    return assignment


def grid_search_2c(X: np.ndarray, y: np.ndarray, grid: GridConfig, seed: int = 0,
                   tol: float = 1e-3) -> HyperParams:
    """Pick (C, gamma) by v-fold cross-validated equal-weight error.

    Ties break toward smaller gamma, then smaller C; the result does not
    depend on grid enumeration order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    fold_of = _cv_folds(y, grid.folds, seed)
    best = None
    for gamma in sorted(grid.gamma_grid):
        for c in sorted(grid.c_or_nu_grid):
            errs = []
            for f in range(grid.folds):
                tr = fold_of != f
                te = ~tr
                model = train_two_class(X[tr], y[tr], HyperParams(c, gamma), tol=tol)
                rates = error_rates(decision_values(model, X[te]), y[te], model.positive_meaning)
                errs.append(weighted_error(rates, EQUAL_WEIGHTS))
            mean_err = float(np.mean(errs))
            if best is None or mean_err < best[0] - 1e-12:
                best = (mean_err, HyperParams(c, gamma))
    return best[1]


def grid_search_1c(X_train: np.ndarray, X_val: np.ndarray, y_val: np.ndarray,
                   grid: GridConfig, weights: ErrorWeights,
                   positive_meaning: str = PRISTINE, tol: float = 1e-3) -> HyperParams:
    """Pick (nu, gamma) for a one-class model by weighted validation error.

    Trains on the full home-class set per cell (no cross-validation) and
    scores alpha * P_fa + beta * P_md on the mixed validation set. Ties
    break toward smaller gamma, then smaller nu. Infeasible nu > 1 cells
    are skipped.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    if X_train.shape[0] < 1:
        raise ValueError("one-class grid search needs training samples")
    y_val = np.asarray(y_val)
    if not ((y_val > 0).any() and (y_val < 0).any()):
        raise ValueError("validation set must contain both classes")
    best = None
    for gamma in sorted(grid.gamma_grid):
        for nu in sorted(grid.c_or_nu_grid):
            if nu > 1.0:
                continue
            model = train_one_class(X_train, HyperParams(nu, gamma),
                                    positive_meaning=positive_meaning, tol=tol)
            rates = error_rates(decision_values(model, X_val), y_val, positive_meaning)
            err = weighted_error(rates, weights)
            if best is None or err < best[0] - 1e-12:
                best = (err, HyperParams(nu, gamma))
    if best is None:
        raise ValueError("no feasible grid cell (all nu > 1)")
    return best[1]


# --- the composed detector ---

@dataclass
class OneHalfClassModel:
    two_class: SvmModel
    oc_pristine: SvmModel
    oc_manipulated: SvmModel
    combiner: SvmModel


@dataclass(frozen=True)
class Prediction:
    d: tuple[float, float, float]
    f: float

    @property
    def label(self) -> str:
        return PRISTINE if self.f >= 0 else MANIPULATED


def _stack_decisions(two_class: SvmModel, oc_pristine: SvmModel, oc_manipulated: SvmModel,
                     X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.stack([
        decision_values(two_class, X),
        decision_values(oc_pristine, X),
        decision_values(oc_manipulated, X),
    ], axis=1)


def d_vectors(model: OneHalfClassModel, X: np.ndarray) -> np.ndarray:
    """Decision 3-vectors of the intermediate classifiers, one row per input."""
    return _stack_decisions(model.two_class, model.oc_pristine, model.oc_manipulated, X)


def predict_15c_batch(model: OneHalfClassModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(d-vectors, combiner values) for a feature matrix."""
    d = d_vectors(model, X)
    return d, decision_values(model.combiner, d)


def predict_15c(model: OneHalfClassModel, x: np.ndarray) -> Prediction:
    d, f = predict_15c_batch(model, np.asarray(x, dtype=np.float64)[None, :])
    return Prediction((float(d[0, 0]), float(d[0, 1]), float(d[0, 2])), float(f[0]))


def _gather(mapping, ids, stage):
    missing = [i for i in ids if i not in mapping]
    if missing:
        raise StageError(stage, f"missing features for {len(missing)} images, e.g. {missing[:3]}")
    return np.array([mapping[i] for i in ids], dtype=np.float64)


@dataclass
class TrainResult:
    model: OneHalfClassModel
    chosen: dict[str, dict] = field(default_factory=dict)


def train_15c(splits: DatasetSplits,
              pristine: dict[str, np.ndarray],
              manipulated: dict[str, np.ndarray],
              grid_2c: GridConfig | None = None,
              grid_1c: GridConfig | None = None,
              grid_combiner: GridConfig | None = None,
              weights_1c: ErrorWeights = INTERMEDIATE_WEIGHTS,
              weights_combiner: ErrorWeights = COMBINER_WEIGHTS,
              seed: int = 0,
              tol: float = 1e-3) -> TrainResult:
    """Validate and train the full detector stack.

    Stage 1 tunes and trains the two-class model (validation split for the
    search, training split for the final fit). Stage 2 does the same for
    the two one-class models on their home classes. Stage 3 computes
    decision 3-vectors for the combiner's validation and training splits,
    and stage 4 tunes and trains the combiner on pristine 3-vectors.
    """
    grid_2c = grid_2c or two_class_default_grid()
    grid_1c = grid_1c or one_class_default_grid()
    grid_combiner = grid_combiner or grid_1c

    def mixed(ids, stage):
        xs = np.concatenate([_gather(pristine, ids, stage), _gather(manipulated, ids, stage)])
        ys = np.concatenate([np.full(len(ids), LABEL_PRISTINE), np.full(len(ids), LABEL_MANIPULATED)])
        return xs, ys

    # Stage 1: two-class classifier.
    stage = "two_class"
    try:
        xv, yv = mixed(splits.s_v, stage)
        hp_2c = grid_search_2c(xv, yv, grid_2c, seed=seed, tol=tol)
        xtr, ytr = mixed(splits.s_tr, stage)
        two_class = train_two_class(xtr, ytr, hp_2c, tol=tol)
    except (ValueError, svm.SmoConvergenceError) as exc:
        raise StageError(stage, str(exc)) from exc

    # Stage 2: one-class intermediates on their home classes.
    stage = "oc_pristine"
    try:
        x_h0 = _gather(pristine, splits.s_tr, stage)
        hp_h0 = grid_search_1c(x_h0, xv, yv, grid_1c, weights_1c, PRISTINE, tol=tol)
        oc_pristine = train_one_class(x_h0, hp_h0, positive_meaning=PRISTINE, tol=tol)
    except (ValueError, svm.SmoConvergenceError) as exc:
        raise StageError(stage, str(exc)) from exc
    stage = "oc_manipulated"
    try:
        x_h1 = _gather(manipulated, splits.s_tr, stage)
        hp_h1 = grid_search_1c(x_h1, xv, yv, grid_1c, weights_1c, MANIPULATED, tol=tol)
        oc_manipulated = train_one_class(x_h1, hp_h1, positive_meaning=MANIPULATED, tol=tol)
    except (ValueError, svm.SmoConvergenceError) as exc:
        raise StageError(stage, str(exc)) from exc

    # Stages 3-4: decision vectors, then the combiner on pristine ones.
    stage = "combiner"
    try:
        d_tr_pristine = _stack_decisions(two_class, oc_pristine, oc_manipulated,
                                         _gather(pristine, splits.s_t_tr, stage))
        xval, yval = mixed(splits.s_t_v, stage)
        d_val = _stack_decisions(two_class, oc_pristine, oc_manipulated, xval)
        hp_cmb = grid_search_1c(d_tr_pristine, d_val, yval, grid_combiner,
                                weights_combiner, PRISTINE, tol=tol)
        combiner = train_one_class(d_tr_pristine, hp_cmb, positive_meaning=PRISTINE, tol=tol)
    except (ValueError, svm.SmoConvergenceError) as exc:
        raise StageError(stage, str(exc)) from exc

    model = OneHalfClassModel(two_class, oc_pristine, oc_manipulated, combiner)
    chosen = {
        "two_class": {"C": hp_2c.c_or_nu, "gamma": hp_2c.gamma},
        "oc_pristine": {"nu": hp_h0.c_or_nu, "gamma": hp_h0.gamma},
        "oc_manipulated": {"nu": hp_h1.c_or_nu, "gamma": hp_h1.gamma},
        "combiner": {"nu": hp_cmb.c_or_nu, "gamma": hp_cmb.gamma},
    }
    return TrainResult(model, chosen)


# --- persistence ---

_MODEL_FILES = {
    "two_class": "two_class.svm",
    "oc_pristine": "oc_pristine.svm",
    "oc_manipulated": "oc_manipulated.svm",
    "combiner": "combiner.svm",
}


def save_15c(model: OneHalfClassModel, out_dir, manifest: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for attr, fname in _MODEL_FILES.items():
        save_model(getattr(model, attr), os.path.join(out_dir, fname))
    if manifest is not None:
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_15c(model_dir) -> OneHalfClassModel:
    parts = {attr: load_model(os.path.join(model_dir, fname)) for attr, fname in _MODEL_FILES.items()}
    return OneHalfClassModel(**parts)
