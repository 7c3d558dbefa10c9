"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with the measured values.

The end-to-end criteria run a full resizing-detection experiment on the
bundled synthetic corpus generator (260 images, 64x64) with scaled splits
and reduced (but protocol-shaped) power-of-two grids; see the fixture.
"""

import csv
import json
import time

import numpy as np
import pytest

from manipdet.attack import (COMPOSITE_TARGET, TWO_CLASS_TARGET, AttackConfig,
                             AttackTarget, pixel_gradient)
from manipdet.experiment import load_config, run_experiment
from manipdet.metrics import accuracy, mse, pixel_change_fraction, roc_auc
from manipdet.spam import SpamConfig, count_tensors, spam_features
from manipdet.svm import (HyperParams, decision_values, train_one_class, train_two_class)

from oracles import (brute_spam_features, decide, one_class_objective, pair_count_auc,
                     qp_one_class, qp_two_class, rbf_gram, two_class_objective)
from test_attack import naive_gradient, random_composite


def report_line(criterion: str, ok: bool, detail: str):
    print(f"[{criterion}] {'PASS' if ok else 'FAIL'}: {detail}")


# --- criterion 1: SVM oracle equivalence -----------------------------------

def test_criterion_1_svm_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.time()
    worst_obj = 0.0
    worst_dec = 0.0
    for trial in range(25):
        n = int(rng.integers(10, 31))
        dim = int(rng.integers(2, 6))
        sep = rng.uniform(1.0, 2.5)
        half = n // 2
        X = np.vstack([rng.normal(-sep / 2, 1.0, size=(half, dim)),
                       rng.normal(+sep / 2, 1.0, size=(n - half, dim))])
        y = np.concatenate([-np.ones(half), np.ones(n - half)])
        C = float(rng.uniform(0.5, 8.0))
        gamma = float(rng.uniform(0.2, 2.0))
        K = rbf_gram(X, gamma)
        probes = rng.normal(size=(10, dim))

        model = train_two_class(X, y, HyperParams(C, gamma), tol=1e-9)
        alpha_ref, bias_ref, obj_ref = qp_two_class(X, y, C, gamma)
        alpha = np.zeros(n)
        for coeff, sv in zip(model.coeffs, model.support_vectors):
            alpha[int(np.argmin(((X - sv) ** 2).sum(axis=1)))] = abs(coeff)
        worst_obj = max(worst_obj, abs(two_class_objective(K, y, alpha) - obj_ref))
        ref = np.array([decide(X, y * alpha_ref, bias_ref, gamma, p) for p in probes])
        worst_dec = max(worst_dec, np.abs(decision_values(model, probes) - ref).max())

        nu = float(rng.uniform(0.1, 0.6))
        oc = train_one_class(X, HyperParams(nu, gamma), tol=1e-10)
        alpha_ref1, bias_ref1, obj_ref1 = qp_one_class(X, nu, gamma)
        alpha1 = np.zeros(n)
        for coeff, sv in zip(oc.coeffs, oc.support_vectors):
            alpha1[int(np.argmin(((X - sv) ** 2).sum(axis=1)))] = coeff
        worst_obj = max(worst_obj, abs(one_class_objective(K, alpha1) - obj_ref1))
        ref1 = np.array([decide(X, alpha_ref1, bias_ref1, gamma, p) for p in probes])
        worst_dec = max(worst_dec, np.abs(decision_values(oc, probes) - ref1).max())
    elapsed = time.time() - t0
    ok = worst_obj < 1e-6 and worst_dec < 1e-5 and elapsed < 10.0
    report_line("criterion 1", ok,
                f"25 datasets x 2 duals; max |obj diff| {worst_obj:.2e} (tol 1e-6), "
                f"max |decision diff| {worst_dec:.2e} (tol 1e-5), {elapsed:.1f}s (< 10s)")
    assert worst_obj < 1e-6
    assert worst_dec < 1e-5
    assert elapsed < 10.0


# --- criterion 2: nu-property ------------------------------------------------

def test_criterion_2_nu_property():
    rng = np.random.default_rng(7)
    details = []
    ok = True
    for nu in (0.05, 0.1, 0.25):
        X = rng.normal(size=(200, 4))
        model = train_one_class(X, HyperParams(nu, 0.5), tol=1e-8)
        d = decision_values(model, X)
        outliers = float((d < -1e-6).mean())  # boundary SVs sit at d == 0
        svs = model.support_vectors.shape[0] / 200
        ok = ok and outliers <= nu + 0.02 and svs >= nu - 0.02
        details.append(f"nu={nu}: outliers {outliers:.3f} <= {nu + 0.02:.3f}, "
                       f"SVs {svs:.3f} >= {nu - 0.02:.3f}")
    report_line("criterion 2", ok, "; ".join(details))
    assert ok


# --- criterion 3: SPAM oracle equivalence ------------------------------------

def test_criterion_3_spam_oracle_equivalence():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(50):
        img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
        ours = spam_features(img)
        assert ours.shape == (686,)
        worst = max(worst, float(np.abs(ours - brute_spam_features(img)).max()))
        counts = count_tensors(img)
        for block, dirs in ((ours[:343], range(4)), (ours[343:], range(4, 8))):
            rows = block.reshape(49, 7).sum(axis=1)
            support = sum((counts[d].reshape(49, 7).sum(axis=1) > 0).astype(int) for d in dirs)
            np.testing.assert_allclose(rows, support / 4.0, atol=1e-12)
            assert np.abs(rows[support == 4] - 1.0).max() <= 1e-12 if (support == 4).any() else True
    ok = worst <= 1e-12
    report_line("criterion 3", ok,
                f"50 random 16x16 images: max |feature diff| {worst:.2e} (tol 1e-12), "
                "length 686, aggregated rows sum to seen-contexts/4 (1 when all four)")
    assert ok


# --- criterion 4: gradient fidelity -------------------------------------------

def test_criterion_4_gradient_fidelity():
    mismatches = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        img = rng.integers(0, 256, size=(8, 8), dtype=np.uint8)
        kind = TWO_CLASS_TARGET if seed % 2 == 0 else COMPOSITE_TARGET
        target = AttackTarget(kind, random_composite(rng))
        cfg = AttackConfig()
        fast = pixel_gradient(target, img, cfg)
        slow = naive_gradient(target, img, cfg)
        if not np.array_equal(fast, slow):
            mismatches += 1
    ok = mismatches == 0
    report_line("criterion 4", ok,
                f"20 model/image pairs on 8x8: {20 - mismatches}/20 maps bit-identical "
                "to full-recompute forward differences")
    assert ok


# --- criteria 5-7: end-to-end experiment --------------------------------------

ACCEPTANCE_CONFIG = {
    "synthetic": {"count": 260, "width": 64, "height": 64, "seed": 17},
    "manipulation": {"kind": "resize"},
    "seed": 5,
    "splits": {"s_v": 40, "s_tr": 120, "s_t_v": 20, "s_t_tr": 25, "s_t_t": None},
    "grid_2c": {"c_exponents": [-1, 3, 7, 11], "gamma_exponents": [-5, -3, -1], "folds": 5},
    "grid_1c": {"nu_exponents": [-5, -3, -2], "gamma_exponents": [-4, -2, 0, 2]},
    "grid_combiner": {"nu_exponents": [-8, -6], "gamma_exponents": [-8, -5, -2]},
    "attack": {"count": 55, "targets": ["2c", "15c"], "max_iters": 60},
    "noise_variances": [5e-6, 1e-5, 1.5e-5, 2e-5],
    "jpeg_qualities": [85, 90, 95, 98],
}


@pytest.fixture(scope="session")
def resize_experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    raw = dict(ACCEPTANCE_CONFIG)
    raw["out_dir"] = str(root / "out")
    raw["corpus_dir"] = str(root / "corpus")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(raw))
    cfg = load_config(cfg_path)
    run_experiment(cfg, log=lambda *a: None)
    return cfg


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _auc_from_scores(rows, column, flip):
    scores = np.array([float(r[column]) for r in rows])
    labels = np.array([1 if int(r["label"]) < 0 else -1 for r in rows])  # manipulated positive
    return roc_auc(-scores if flip else scores, labels).auc


def test_criterion_5_end_to_end_auc(resize_experiment):
    cfg = resize_experiment
    rows = _read_rows(cfg.path("records", "test_scores.csv"))
    auc_2c = _auc_from_scores(rows, "d1", flip=True)
    auc_15c = _auc_from_scores(rows, "f", flip=True)
    ok = auc_2c >= 0.95 and auc_15c >= auc_2c - 0.03
    report_line("criterion 5", ok,
                f"resizing task: AUC(2C)={auc_2c:.4f} (>= 0.95), "
                f"AUC(1.5C)={auc_15c:.4f} (>= AUC(2C) - 0.03)")
    assert auc_2c >= 0.95
    assert auc_15c >= auc_2c - 0.03


def test_criterion_6_security_gap(resize_experiment):
    cfg = resize_experiment
    rows_2c = _read_rows(cfg.path("records", "attack_2c.csv"))
    rows_15c = _read_rows(cfg.path("records", "attack_15c.csv"))
    assert len(rows_2c) >= 50 and len(rows_15c) >= 50

    success_2c = np.mean([int(r["success"]) for r in rows_2c])
    success_15c = np.mean([int(r["success"]) for r in rows_15c])
    mse_2c = np.mean([float(r["mse"]) for r in rows_2c])
    mse_15c = np.mean([float(r["mse"]) for r in rows_15c])
    ratio = mse_15c / mse_2c
    cross = np.mean([float(r["f"]) >= 0 for r in rows_2c])

    ok = (success_2c == 1.0 and success_15c >= 0.95 and ratio >= 1.3 and cross <= 0.10)
    report_line("criterion 6", ok,
                f"{len(rows_2c)} attacked images: success(2C)={success_2c * 100:.0f}% (=100%), "
                f"success(1.5C)={success_15c * 100:.1f}% (>=95%), "
                f"MSE ratio {mse_15c:.3f}/{mse_2c:.3f}={ratio:.2f} (>=1.3), "
                f"2C-attacked accepted by composite {cross * 100:.1f}% (<=10%)")
    assert success_2c == 1.0
    assert success_15c >= 0.95
    assert ratio >= 1.3
    assert cross <= 0.10


def _robust_acc(rows, level, column, flip):
    sub = [r for r in rows if float(r["level"]) == level]
    scores = np.array([float(r[column]) for r in sub])
    labels = np.array([1 if int(r["label"]) < 0 else -1 for r in sub])
    return accuracy(-scores if flip else scores, labels)


def test_criterion_7_robustness_direction(resize_experiment):
    cfg = resize_experiment
    jpeg = _read_rows(cfg.path("records", "robust_jpeg.csv"))
    acc_15c_jpeg = _robust_acc(jpeg, 90, "f", flip=True)
    acc_h0_jpeg = _robust_acc(jpeg, 90, "d2", flip=True)

    noise = _read_rows(cfg.path("records", "robust_noise.csv"))
    acc_15c_noise = _robust_acc(noise, 1e-5, "f", flip=True)
    acc_h0_noise = _robust_acc(noise, 1e-5, "d2", flip=True)
    acc_h1_noise = _robust_acc(noise, 1e-5, "d3", flip=False)

    ok = (acc_15c_jpeg >= acc_h0_jpeg + 0.05
          and acc_15c_noise >= max(acc_h0_noise, acc_h1_noise) - 0.05)
    report_line("criterion 7", ok,
                f"JPEG QF90: acc(1.5C)={acc_15c_jpeg:.3f} >= acc(1C_H0)+0.05={acc_h0_jpeg + 0.05:.3f}; "
                f"noise 1e-5: acc(1.5C)={acc_15c_noise:.3f} >= "
                f"max(1C)-0.05={max(acc_h0_noise, acc_h1_noise) - 0.05:.3f}")
    assert acc_15c_jpeg >= acc_h0_jpeg + 0.05
    assert acc_15c_noise >= max(acc_h0_noise, acc_h1_noise) - 0.05


# --- criterion 8: determinism --------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    raw = {
        "synthetic": {"count": 60, "width": 48, "height": 48, "seed": 4},
        "manipulation": {"kind": "resize"},
        "seed": 9,
        "splits": {"s_v": 10, "s_tr": 22, "s_t_v": 8, "s_t_tr": 10, "s_t_t": None},
        "grid_2c": {"c_exponents": [3, 11], "gamma_exponents": [-4, -2], "folds": 3},
        "grid_1c": {"nu_exponents": [-4, -2], "gamma_exponents": [-3, -1]},
        "grid_combiner": {"nu_exponents": [-6], "gamma_exponents": [-6, -3]},
        "attack": {"count": 2, "targets": ["2c"], "max_iters": 20},
        "noise_variances": [1e-5],
        "jpeg_qualities": [90],
        "corpus_dir": str(tmp_path / "corpus"),
    }
    outputs = []
    for run in ("out_a", "out_b"):
        raw["out_dir"] = str(tmp_path / run)
        cfg_path = tmp_path / f"config_{run}.json"
        cfg_path.write_text(json.dumps(raw))
        cfg = load_config(cfg_path)
        run_experiment(cfg, log=lambda *a: None)
        blobs = {}
        for rel in ("models/two_class.svm", "models/oc_pristine.svm",
                    "models/oc_manipulated.svm", "models/combiner.svm",
                    "models/manifest.json", "report/report.txt", "report/auc.csv",
                    "records/test_scores.csv", "records/attack_2c.csv"):
            with open(cfg.path(rel), "rb") as fh:
                blobs[rel] = fh.read()
        outputs.append(blobs)
    same = {k for k in outputs[0] if outputs[0][k] == outputs[1][k]}
    ok = same == set(outputs[0])
    report_line("criterion 8", ok,
                f"two full runs: {len(same)}/{len(outputs[0])} artifacts byte-identical "
                "(models, manifest, records, report)")
    assert ok


# --- criterion 9: metric oracles ------------------------------------------------

def test_criterion_9_metric_oracles():
    rng = np.random.default_rng(31)
    mismatch = 0
    for _ in range(100):
        scores = np.round(rng.normal(size=10), 1)
        labels = rng.choice([1, -1], size=10)
        if (labels > 0).all() or (labels < 0).all():
            labels[0] = -labels[0]
        if roc_auc(scores, labels).auc != pair_count_auc(scores, labels):
            mismatch += 1

    img_a = rng.integers(0, 256, size=(12, 9), dtype=np.uint8)
    img_b = img_a.copy()
    flips = rng.integers(0, img_a.size, size=20)
    img_b.ravel()[flips] = rng.integers(0, 256, size=20)
    naive_mse = sum((int(x) - int(y)) ** 2 for x, y in zip(img_a.ravel(), img_b.ravel())) / img_a.size
    naive_frac = sum(int(x != y) for x, y in zip(img_a.ravel(), img_b.ravel())) / img_a.size
    mse_ok = mse(img_a, img_b) == naive_mse
    frac_ok = pixel_change_fraction(img_a, img_b) == naive_frac

    ok = mismatch == 0 and mse_ok and frac_ok
    report_line("criterion 9", ok,
                f"AUC == pair counting on {100 - mismatch}/100 ten-sample cases; "
                f"MSE naive match: {mse_ok}; pixel-fraction naive match: {frac_ok}")
    assert ok
