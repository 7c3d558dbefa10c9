"""Kernel SVM engine: RBF kernel, SMO training, decision evaluation, model files.

Two trainers share one sequential-minimal-optimization core with
second-order working-set selection and an epsilon-KKT stopping rule:

* ``train_two_class`` solves the soft-margin dual
  min 0.5 a'Qa - sum(a)  s.t.  0 <= a_i <= C,  sum(y_i a_i) = 0,
  with Q_ij = y_i y_j K(x_i, x_j).
* ``train_one_class`` solves the nu-formulation dual
  min 0.5 a'Ka  s.t.  0 <= a_i <= 1/(nu n),  sum(a_i) = 1,
  so nu upper-bounds the training-outlier fraction and lower-bounds the
  support-vector fraction.

Decision values are sum_i coeff_i K(sv_i, x) + bias with the class read
off the sign against threshold 0. Training is single-threaded and
deterministic; kernel rows are cached so large training sets do not need
a full Gram matrix.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

TWO_CLASS = "two_class"
ONE_CLASS = "one_class"
PRISTINE = "pristine"
MANIPULATED = "manipulated"

_TAU = 1e-12


class SmoConvergenceError(RuntimeError):
    """Raised when the solver hits its update cap before reaching the KKT gap."""

    def __init__(self, gap: float, iterations: int, tol: float):
        self.gap = gap
        self.iterations = iterations
        self.tol = tol
        super().__init__(
            f"SMO did not converge: KKT gap {gap:.3e} > tol {tol:.1e} after {iterations} updates"
        )


@dataclass(frozen=True)
class HyperParams:
    """Regularization (C for two-class, nu for one-class) and kernel width."""

    c_or_nu: float
    gamma: float

    def __post_init__(self):
        if self.c_or_nu <= 0:
            raise ValueError(f"C/nu must be positive, got {self.c_or_nu}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass
class SvmModel:
    kind: str
    gamma: float
    bias: float
    coeffs: np.ndarray            # y_i * alpha_i (two-class) or alpha_i (one-class)
    support_vectors: np.ndarray   # (n_sv, dim)
    positive_meaning: str

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> float:
    """exp(-gamma * ||a - b||^2); 1.0 at zero distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d = a - b
    return float(np.exp(-gamma * np.dot(d, d)))


def decision_values(model: SvmModel, X: np.ndarray) -> np.ndarray:
    """Decision values for a batch of inputs, one per row.

    Each row is evaluated independently with a fixed reduction order, so a
    batch call and repeated single calls give bit-identical results.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: input {X.shape[1]}, model {model.dim}")
    sv = model.support_vectors
    out = np.empty(X.shape[0], dtype=np.float64)
    # Chunked to bound the (chunk, n_sv, dim) temporary; per-element results
    # do not depend on the chunking.
    chunk = max(1, int(4_000_000 / max(1, sv.shape[0] * sv.shape[1])))
    for s in range(0, X.shape[0], chunk):
        block = X[s:s + chunk]
        d2 = ((block[:, None, :] - sv[None, :, :]) ** 2).sum(axis=2)
        k = np.exp(-model.gamma * d2)
        out[s:s + chunk] = (k * model.coeffs).sum(axis=1) + model.bias
    return out


def decision_value(model: SvmModel, x: np.ndarray) -> float:
    """Decision value of a single input (positive side = positive_meaning)."""
    return float(decision_values(model, np.asarray(x, dtype=np.float64)[None, :])[0])


def decision_values_fast(model: SvmModel, X: np.ndarray) -> np.ndarray:
    """Throughput-oriented batch evaluation via the Gram expansion.

    Used for bulk scoring (attack probing); matches ``decision_values`` to
    float tolerance but not necessarily to the last bit, because BLAS
    reduction order depends on matrix shape.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: input {X.shape[1]}, model {model.dim}")
    sv = model.support_vectors
    d2 = (X * X).sum(axis=1)[:, None] + (sv * sv).sum(axis=1)[None, :] - 2.0 * (X @ sv.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-model.gamma * d2) @ model.coeffs + model.bias


def decision_gradient(model: SvmModel, x: np.ndarray) -> np.ndarray:
    """Analytic gradient of the decision value with respect to the input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValueError(f"dimension mismatch: input {x.shape}, model {model.dim}")
    diff = x - model.support_vectors
    k = np.exp(-model.gamma * (diff ** 2).sum(axis=1))
    return -2.0 * model.gamma * ((model.coeffs * k) @ diff)


class _KernelCache:
    """On-demand RBF kernel rows with FIFO eviction.

    Problems small enough for a full Gram matrix get one up front.
    """

    def __init__(self, X: np.ndarray, gamma: float, max_rows: int = 2048):
        self.X = X
        self.gamma = gamma
        self.norms = (X * X).sum(axis=1)
        n = X.shape[0]
        self.full = None
        if n * n * 8 <= 256_000_000 and n <= max_rows:
            d2 = self.norms[:, None] + self.norms[None, :] - 2.0 * (X @ X.T)
            np.maximum(d2, 0.0, out=d2)
            self.full = np.exp(-gamma * d2)
        self._rows: dict[int, np.ndarray] = {}
        self._order: list[int] = []
        self._max_rows = max_rows

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        got = self._rows.get(i)
        if got is not None:
            return got
        d2 = self.norms + self.norms[i] - 2.0 * (self.X @ self.X[i])
        np.maximum(d2, 0.0, out=d2)
        r = np.exp(-self.gamma * d2)
        self._rows[i] = r
        self._order.append(i)
        if len(self._order) > self._max_rows:
            self._rows.pop(self._order.pop(0), None)
        return r


def _smo_solve(cache: _KernelCache, y: np.ndarray, p: np.ndarray, ub: float,
               alpha: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Minimize 0.5 a'Qa + p'a over the box [0, ub]^n with sum(y a) fixed.

    Q_ij = y_i y_j K_ij. Starts from the feasible ``alpha`` given. Returns
    (alpha, gradient, updates); the gradient is Q a + p at the solution.
    Working pairs are picked by the maximal-violating-pair rule with a
    second-order refinement of the second index.
    """
    n = y.shape[0]
    G = p.copy()
    active = np.nonzero(alpha)[0]
    for i in active:
        G += (y[i] * alpha[i]) * (y * cache.row(i))

    it = 0
    while True:
        ygt = -y * G
        up = ((y > 0) & (alpha < ub)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < ub))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(ygt[up])])
        m = ygt[i]
        M = float(ygt[low].min())
        if m - M <= tol:
            break
        if it >= max_iter:
            raise SmoConvergenceError(m - M, it, tol)

        ki = cache.row(i)
        cand = low & (ygt < m)
        idx = np.flatnonzero(cand)
        bvals = m - ygt[idx]
        # Curvature along the feasible pair direction is K_ii + K_tt - 2 K_it
        # regardless of labels; K_ii = 1 for RBF.
        avals = np.maximum(2.0 - 2.0 * ki[idx], _TAU)
        j = int(idx[np.argmin(-(bvals * bvals) / avals)])
        kj = cache.row(j)

        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(2.0 - 2.0 * ki[j], _TAU)
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > ub:
                    alpha[i] = ub
                    alpha[j] = ub - diff
            else:
                if alpha[j] > ub:
                    alpha[j] = ub
                    alpha[i] = ub + diff
        else:
            quad = max(2.0 - 2.0 * ki[j], _TAU)
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > ub:
                if alpha[i] > ub:
                    alpha[i] = ub
                    alpha[j] = total - ub
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > ub:
                if alpha[j] > ub:
                    alpha[j] = ub
                    alpha[i] = total - ub
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        d_i, d_j = alpha[i] - old_i, alpha[j] - old_j
        G += (y[i] * d_i) * (y * ki) + (y[j] * d_j) * (y * kj)
        it += 1
    return alpha, G, it


def _bias_from_gradient(y, alpha, G, ub) -> float:
    """Bias from the KKT conditions: -yG averaged over free vectors, else midpoint."""
    free = (alpha > 0) & (alpha < ub)
    yg = y * G
    if free.any():
        return float(-yg[free].mean())
    upper = np.where(alpha <= 0, y > 0, (alpha >= ub) & (y < 0))
    lower = np.where(alpha <= 0, y < 0, (alpha >= ub) & (y > 0))
    hi = yg[upper].min() if upper.any() else np.inf
    lo = yg[lower].max() if lower.any() else -np.inf
    if not np.isfinite(hi):
        return float(-lo)
    if not np.isfinite(lo):
        return float(-hi)
    return float(-(hi + lo) / 2.0)


def train_two_class(X: np.ndarray, y: np.ndarray, hp: HyperParams,
                    positive_meaning: str = PRISTINE, tol: float = 1e-3,
                    max_iter: int = 10_000_000) -> SvmModel:
    """Train a soft-margin two-class RBF SVM on labels +1/-1."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, dim) with one label per row")
    if not (set(np.unique(y)) <= {-1.0, 1.0}) or len(np.unique(y)) != 2:
        raise ValueError("two-class training needs both labels, encoded +1/-1")
    C = hp.c_or_nu
    n = X.shape[0]
    cache = _KernelCache(X, hp.gamma)
    alpha = np.zeros(n)
    alpha, G, _ = _smo_solve(cache, y, -np.ones(n), C, alpha, tol, max_iter)
    bias = _bias_from_gradient(y, alpha, G, C)
    sv = alpha > 0
    if not sv.any():
        # Degenerate but feasible (e.g. tiny C): keep the largest alpha's point.
        sv = np.zeros(n, dtype=bool)
        sv[int(np.argmax(alpha))] = True
    return SvmModel(TWO_CLASS, hp.gamma, bias, (y * alpha)[sv].copy(), X[sv].copy(), positive_meaning)


def train_one_class(X: np.ndarray, hp: HyperParams,
                    positive_meaning: str = PRISTINE, tol: float = 1e-3,
                    max_iter: int = 10_000_000) -> SvmModel:
    """Train a nu-one-class RBF SVM on unlabeled samples of the home class."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("X must be (n, dim) with n >= 1")
    nu = hp.c_or_nu
    if not 0 < nu <= 1:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    n = X.shape[0]
    ub = 1.0 / (nu * n)
    alpha = np.zeros(n)
    n_full = min(n, int(math.floor(nu * n)))
    alpha[:n_full] = ub
    rest = 1.0 - n_full * ub
    if rest > 0 and n_full < n:
        alpha[n_full] = rest
    y = np.ones(n)
    cache = _KernelCache(X, hp.gamma)
    alpha, G, _ = _smo_solve(cache, y, np.zeros(n), ub, alpha, tol, max_iter)
    bias = _bias_from_gradient(y, alpha, G, ub)
    sv = alpha > 0
    return SvmModel(ONE_CLASS, hp.gamma, bias, alpha[sv].copy(), X[sv].copy(), positive_meaning)


# --- model files ---
# Versioned self-describing text format: a fixed header, then one line per
# support vector holding the coefficient and the vector entries, written
# with repr so deserialization reproduces every float bit-exactly. The
# checksum covers the support-vector block.

_MAGIC = "manipdet-svm 1"


class ModelFormatError(ValueError):
    """Malformed, truncated, corrupted, or wrong-version model data."""


def serialize(model: SvmModel) -> bytes:
    n_sv = model.support_vectors.shape[0]
    if n_sv == 0:
        raise ValueError("refusing to serialize a model with no support vectors")
    if model.coeffs.shape != (n_sv,):
        raise ValueError("coefficient/support vector count mismatch")
    lines = []
    for coeff, vec in zip(model.coeffs, model.support_vectors):
        lines.append(" ".join([repr(float(coeff))] + [repr(float(v)) for v in vec]))
    block = ("\n".join(lines) + "\n").encode()
    header = (
        f"{_MAGIC}\n"
        f"kind {model.kind}\n"
        f"positive_meaning {model.positive_meaning}\n"
        f"dim {model.dim}\n"
        f"gamma {repr(float(model.gamma))}\n"
        f"bias {repr(float(model.bias))}\n"
        f"num_sv {n_sv}\n"
        f"checksum {hashlib.sha256(block).hexdigest()}\n"
    )
    return header.encode() + block


def deserialize(data: bytes) -> SvmModel:
    try:
        text = data.decode()
    except UnicodeDecodeError as exc:
        raise ModelFormatError(f"not a model file: {exc}") from None
    lines = text.splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ModelFormatError(f"version mismatch: expected {_MAGIC!r}")
    fields = {}
    for ln in lines[1:8]:
        parts = ln.split(None, 1)
        if len(parts) != 2:
            raise ModelFormatError(f"malformed header line {ln!r}")
        fields[parts[0]] = parts[1]
    required = ("kind", "positive_meaning", "dim", "gamma", "bias", "num_sv", "checksum")
    missing = [k for k in required if k not in fields]
    if missing:
        raise ModelFormatError(f"truncated header, missing {missing}")
    try:
        dim = int(fields["dim"])
        gamma = float(fields["gamma"])
        bias = float(fields["bias"])
        num_sv = int(fields["num_sv"])
    except ValueError as exc:
        raise ModelFormatError(f"malformed header field: {exc}") from None
    if fields["kind"] not in (TWO_CLASS, ONE_CLASS):
        raise ModelFormatError(f"unknown model kind {fields['kind']!r}")
    if fields["positive_meaning"] not in (PRISTINE, MANIPULATED):
        raise ModelFormatError(f"unknown positive_meaning {fields['positive_meaning']!r}")
    sv_lines = lines[8:]
    if len(sv_lines) != num_sv:
        raise ModelFormatError(f"truncated file: {len(sv_lines)} support vector lines, expected {num_sv}")
    block = ("\n".join(sv_lines) + "\n").encode()
    digest = hashlib.sha256(block).hexdigest()
    if digest != fields["checksum"]:
        raise ModelFormatError("checksum failure: support vector block corrupted")
    coeffs = np.empty(num_sv)
    vectors = np.empty((num_sv, dim))
    for r, ln in enumerate(sv_lines):
        cells = ln.split()
        if len(cells) != dim + 1:
            raise ModelFormatError(f"malformed support vector line {r}: {len(cells) - 1} values, expected {dim}")
        try:
            coeffs[r] = float(cells[0])
            vectors[r] = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise ModelFormatError(f"malformed number on line {r}: {exc}") from None
    return SvmModel(fields["kind"], gamma, bias, coeffs, vectors, fields["positive_meaning"])


def save_model(model: SvmModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
