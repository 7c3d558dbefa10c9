"""Experiment orchestration: prepare, extract, train, evaluate, attack, report.

An experiment is described by a JSON config file (flat keys, documented in
the README) and materializes under its output directory:

    manipulated/      processed copies of the corpus (the H1 class)
    features/         pristine.csv and manipulated.csv feature tables
    models/           four .svm model files plus manifest.json
    records/          per-image score/attack records (full precision)
    attacked/         attacked images per target
    report/           aggregate tables and a plain-text summary

Stages are resumable: a stage whose outputs already exist is skipped, so
rerunning an unchanged config reuses every cache. All randomness flows
from seeds named in the config; reports carry no timestamps, making
reruns byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import synthetic
from .attack import COMPOSITE_TARGET, TWO_CLASS_TARGET, AttackConfig, AttackTarget, run_attack
from .imgops import ManipulationSpec, add_gaussian_noise, apply_manipulation, jpeg_cycle, rgb_to_v
from .metrics import accuracy, roc_auc
from .pipeline import (COMBINER_WEIGHTS, INTERMEDIATE_WEIGHTS, DatasetSplits, ErrorWeights,
                       GridConfig, LABEL_MANIPULATED, LABEL_PRISTINE, OneHalfClassModel,
                       SplitSizes, StageError, load_15c, make_splits, one_class_default_grid,
                       predict_15c_batch, save_15c, scaled_split_sizes, train_15c,
                       two_class_default_grid)
from .raster import LOSSLESS_EXTENSIONS, load_image, save_image
from .spam import SpamConfig, read_feature_csv, spam_features, write_feature_csv

STAGES = ("prepare", "extract", "train", "evaluate", "attack", "report")

DEFAULT_NOISE_VARIANCES = (5e-6, 1e-5, 1.5e-5, 2e-5)
DEFAULT_JPEG_QUALITIES = (85, 90, 95, 98)

CLASSIFIER_COLUMNS = ("d1", "d2", "d3", "f")
CLASSIFIER_NAMES = ("two_class", "oc_pristine", "oc_manipulated", "composite")


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


@dataclass
class ExperimentConfig:
    out_dir: str
    corpus_dir: str
    manipulation: ManipulationSpec
    spam: SpamConfig = SpamConfig()
    seed: int = 0
    jobs: int = 1
    split_sizes: SplitSizes = field(default_factory=lambda: scaled_split_sizes(1.0))
    grid_2c: GridConfig = field(default_factory=two_class_default_grid)
    grid_1c: GridConfig = field(default_factory=one_class_default_grid)
    grid_combiner: GridConfig | None = None
    weights_intermediate: ErrorWeights = INTERMEDIATE_WEIGHTS
    weights_combiner: ErrorWeights = COMBINER_WEIGHTS
    smo_tol: float = 1e-3
    noise_variances: tuple[float, ...] = DEFAULT_NOISE_VARIANCES
    jpeg_qualities: tuple[int, ...] = DEFAULT_JPEG_QUALITIES
    evaluate_2c_on_full_test_pool: bool = False
    attack_count: int = 100
    attack_targets: tuple[str, ...] = (TWO_CLASS_TARGET, COMPOSITE_TARGET)
    attack_cfg: AttackConfig = AttackConfig()
    synthetic_corpus: dict | None = None

    def path(self, *parts) -> str:
        return os.path.join(self.out_dir, *parts)


def _require(raw: dict, key: str):
    if key not in raw:
        raise ConfigError(f"config is missing required key {key!r}")
    return raw[key]


def _grid_from_json(raw: dict, default: GridConfig, what: str) -> GridConfig:
    try:
        reg = raw.get("c_exponents", raw.get("nu_exponents"))
        reg_grid = default.c_or_nu_grid if reg is None else tuple(2.0 ** float(e) for e in reg)
        gam = raw.get("gamma_exponents")
        gam_grid = default.gamma_grid if gam is None else tuple(2.0 ** float(e) for e in gam)
        return GridConfig(reg_grid, gam_grid, int(raw.get("folds", default.folds)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what} grid: {exc}") from None


def load_config(path: str, seed: int | None = None, jobs: int | None = None,
                out_dir: str | None = None) -> ExperimentConfig:
    """Parse and validate a config file; CLI overrides win over file values."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    try:
        m = dict(_require(raw, "manipulation"))
        kind = m.pop("kind", None)
        if kind is None:
            raise ConfigError("manipulation.kind is required")
        if "tiles" in m:
            m["tiles"] = tuple(m["tiles"])
        manipulation = ManipulationSpec(kind, **m)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad manipulation spec: {exc}") from None

    splits_raw = raw.get("splits", {"scale": 1.0})
    try:
        if "scale" in splits_raw:
            split_sizes = scaled_split_sizes(float(splits_raw["scale"]))
        else:
            split_sizes = SplitSizes(
                int(splits_raw["s_v"]), int(splits_raw["s_tr"]),
                int(splits_raw["s_t_v"]), int(splits_raw["s_t_tr"]),
                None if splits_raw.get("s_t_t") is None else int(splits_raw["s_t_t"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad splits: {exc}") from None

    try:
        weights_i = ErrorWeights(*raw.get("weights_intermediate", (0.2, 0.8)))
        weights_c = ErrorWeights(*raw.get("weights_combiner", (0.1, 0.9)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad error weights: {exc}") from None

    attack_raw = dict(raw.get("attack", {}))
    targets = tuple(attack_raw.pop("targets", (TWO_CLASS_TARGET, COMPOSITE_TARGET)))
    if not set(targets) <= {TWO_CLASS_TARGET, COMPOSITE_TARGET}:
        raise ConfigError(f"attack targets must be drawn from ('2c', '15c'), got {targets}")
    count = int(attack_raw.pop("count", 100))
    try:
        attack_cfg = AttackConfig(**attack_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad attack settings: {exc}") from None

    try:
        spam_cfg = SpamConfig(int(raw.get("spam_t", 3)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    grid_1c = _grid_from_json(raw.get("grid_1c", {}), one_class_default_grid(), "one-class")
    cfg = ExperimentConfig(
        out_dir=str(out_dir or _require(raw, "out_dir")),
        corpus_dir=str(_require(raw, "corpus_dir")),
        manipulation=manipulation,
        spam=spam_cfg,
        seed=int(seed if seed is not None else raw.get("seed", 0)),
        jobs=int(jobs if jobs is not None else raw.get("jobs", 1)),
        split_sizes=split_sizes,
        grid_2c=_grid_from_json(raw.get("grid_2c", {}), two_class_default_grid(), "two-class"),
        grid_1c=grid_1c,
        grid_combiner=(None if "grid_combiner" not in raw
                       else _grid_from_json(raw["grid_combiner"], grid_1c, "combiner")),
        weights_intermediate=weights_i,
        weights_combiner=weights_c,
        smo_tol=float(raw.get("smo_tol", 1e-3)),
        noise_variances=tuple(float(v) for v in raw.get("noise_variances", DEFAULT_NOISE_VARIANCES)),
        jpeg_qualities=tuple(int(q) for q in raw.get("jpeg_qualities", DEFAULT_JPEG_QUALITIES)),
        evaluate_2c_on_full_test_pool=bool(raw.get("evaluate_2c_on_full_test_pool", False)),
        attack_count=count,
        attack_targets=targets,
        attack_cfg=attack_cfg,
        synthetic_corpus=raw.get("synthetic"),
    )
    if cfg.jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {cfg.jobs}")
    if any(v < 0 for v in cfg.noise_variances):
        raise ConfigError("noise variances must be non-negative")
    if any(not 1 <= q <= 100 for q in cfg.jpeg_qualities):
        raise ConfigError("JPEG qualities must lie in [1, 100]")
    if cfg.attack_count < 1:
        raise ConfigError("attack count must be >= 1")
    return cfg


# --- corpus helpers ---

def corpus_ids(cfg: ExperimentConfig) -> list[str]:
    if not os.path.isdir(cfg.corpus_dir):
        raise ConfigError(f"corpus directory {cfg.corpus_dir!r} does not exist")
    ids = sorted(os.path.splitext(f)[0] for f in os.listdir(cfg.corpus_dir)
                 if os.path.splitext(f)[1].lower() in LOSSLESS_EXTENSIONS)
    if not ids:
        raise ConfigError(f"no lossless images found in {cfg.corpus_dir!r}")
    return ids


def corpus_path(cfg: ExperimentConfig, img_id: str) -> str:
    for ext in LOSSLESS_EXTENSIONS:
        p = os.path.join(cfg.corpus_dir, img_id + ext)
        if os.path.exists(p):
            return p
    raise StageError("prepare", f"corpus image {img_id} disappeared")


def ensure_corpus(cfg: ExperimentConfig) -> list[str]:
    """Generate the synthetic corpus if configured and absent, then list ids."""
    if cfg.synthetic_corpus is not None and not os.path.isdir(cfg.corpus_dir):
        s = cfg.synthetic_corpus
        synthetic.generate_corpus(
            cfg.corpus_dir, int(s.get("count", 260)),
            height=int(s.get("height", 64)), width=int(s.get("width", 64)),
            seed=int(s.get("seed", cfg.seed)),
        )
    return corpus_ids(cfg)


def _parallel_map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (jobs * 4))))


def _feature_channel(img: np.ndarray) -> np.ndarray:
    return rgb_to_v(img)[0] if img.ndim == 3 else img


def _extract_one(paths: tuple[str, str], spam_cfg: SpamConfig) -> np.ndarray:
    return spam_features(_feature_channel(load_image(paths[1])), spam_cfg)


def _manipulate_one(job: tuple[str, str], spec: ManipulationSpec) -> None:
    src, dst = job
    save_image(apply_manipulation(load_image(src), spec), dst)


# --- stages ---

def stage_prepare(cfg: ExperimentConfig, log=print) -> list[str]:
    """Materialize the manipulated (H1) copy of every corpus image."""
    ids = ensure_corpus(cfg)
    out = cfg.path("manipulated")
    os.makedirs(out, exist_ok=True)
    jobs = [(corpus_path(cfg, i), os.path.join(out, i + ".png")) for i in ids]
    todo = [j for j in jobs if not os.path.exists(j[1])]
    if not todo:
        log(f"[prepare] cached ({len(ids)} images)")
        return ids
    _parallel_map(partial(_manipulate_one, spec=cfg.manipulation), todo, cfg.jobs)
    log(f"[prepare] manipulated {len(todo)} images -> {out}")
    return ids


def stage_extract(cfg: ExperimentConfig, log=print) -> None:
    """Compute SPAM features for both classes into CSV tables."""
    ids = stage_prepare(cfg, log=lambda *a: None)
    os.makedirs(cfg.path("features"), exist_ok=True)
    for label, name, path_of in (
        (LABEL_PRISTINE, "pristine", lambda i: corpus_path(cfg, i)),
        (LABEL_MANIPULATED, "manipulated", lambda i: cfg.path("manipulated", i + ".png")),
    ):
        out_csv = cfg.path("features", f"{name}.csv")
        if os.path.exists(out_csv):
            log(f"[extract] cached {name}")
            continue
        rows = _parallel_map(partial(_extract_one, spam_cfg=cfg.spam),
                             [(i, path_of(i)) for i in ids], cfg.jobs)
        write_feature_csv(out_csv, ids, np.array(rows), [label] * len(ids))
        log(f"[extract] {name}: {len(ids)} x {cfg.spam.dim} -> {out_csv}")


def _load_features(cfg: ExperimentConfig, name: str) -> dict[str, np.ndarray]:
    path = cfg.path("features", f"{name}.csv")
    if not os.path.exists(path):
        raise StageError("train", f"missing features {path}; run the extract stage first")
    ids, X, _ = read_feature_csv(path)
    return dict(zip(ids, X))


def stage_train(cfg: ExperimentConfig, log=print) -> None:
    """Grid-search and train the four models; write model files and manifest."""
    manifest_path = cfg.path("models", "manifest.json")
    if os.path.exists(manifest_path):
        log("[train] cached")
        return
    pristine = _load_features(cfg, "pristine")
    manipulated = _load_features(cfg, "manipulated")
    splits = make_splits(sorted(pristine), cfg.split_sizes, cfg.seed)
    result = train_15c(
        splits, pristine, manipulated,
        grid_2c=cfg.grid_2c, grid_1c=cfg.grid_1c, grid_combiner=cfg.grid_combiner,
        weights_1c=cfg.weights_intermediate, weights_combiner=cfg.weights_combiner,
        seed=cfg.seed, tol=cfg.smo_tol,
    )
    manifest = {
        "manipulation": {
            "kind": cfg.manipulation.kind, "scale": cfg.manipulation.scale,
            "window": cfg.manipulation.window, "clip_limit": cfg.manipulation.clip_limit,
        },
        "spam_t": cfg.spam.T,
        "seed": cfg.seed,
        "weights": {
            "intermediate": [cfg.weights_intermediate.alpha, cfg.weights_intermediate.beta],
            "combiner": [cfg.weights_combiner.alpha, cfg.weights_combiner.beta],
        },
        "chosen_hyperparameters": result.chosen,
        "splits": splits.as_dict(),
    }
    save_15c(result.model, cfg.path("models"), manifest)
    log(f"[train] chosen hyperparameters: {json.dumps(result.chosen)}")


def _load_trained(cfg: ExperimentConfig, stage: str) -> tuple[OneHalfClassModel, DatasetSplits]:
    manifest_path = cfg.path("models", "manifest.json")
    if not os.path.exists(manifest_path):
        raise StageError(stage, "no trained models; run the train stage first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    splits = DatasetSplits(**{k: tuple(v) for k, v in manifest["splits"].items()})
    return load_15c(cfg.path("models")), splits


def _write_records(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _score_rows(model: OneHalfClassModel, feats: dict[str, np.ndarray], ids, label) -> list[list]:
    X = np.array([feats[i] for i in ids])
    d, f = predict_15c_batch(model, X)
    return [[i, label] + [repr(float(v)) for v in d[k]] + [repr(float(f[k]))]
            for k, i in enumerate(ids)]


def _postprocessed_scores(job, cfg: ExperimentConfig, kind: str):
    img_id, label, level_idx, level, path = job
    img = load_image(path)
    if kind == "noise":
        stable_id = zlib.crc32(img_id.encode())
        seed = int(np.random.SeedSequence(
            [cfg.seed, level_idx, label + 2, stable_id]).generate_state(1)[0])
        post = add_gaussian_noise(img, level, seed)
    else:
        post = jpeg_cycle(img, int(level))
    return spam_features(_feature_channel(post), cfg.spam)


def stage_evaluate(cfg: ExperimentConfig, log=print) -> None:
    """Score the test split clean and under benign post-processing."""
    os.makedirs(cfg.path("records"), exist_ok=True)
    scores_path = cfg.path("records", "test_scores.csv")
    model, splits = _load_trained(cfg, "evaluate")
    pristine = _load_features(cfg, "pristine")
    manipulated = _load_features(cfg, "manipulated")
    header = ["source_id", "label", *CLASSIFIER_COLUMNS]

    if not os.path.exists(scores_path):
        ids = sorted(splits.s_t_t)
        rows = _score_rows(model, pristine, ids, LABEL_PRISTINE) + \
            _score_rows(model, manipulated, ids, LABEL_MANIPULATED)
        _write_records(scores_path, header, rows)
        log(f"[evaluate] clean scores for {len(ids)} test images")
    else:
        log("[evaluate] cached clean scores")

    if cfg.evaluate_2c_on_full_test_pool:
        pool_path = cfg.path("records", "test_scores_full_pool.csv")
        if not os.path.exists(pool_path):
            ids = sorted(splits.s_t)
            rows = _score_rows(model, pristine, ids, LABEL_PRISTINE) + \
                _score_rows(model, manipulated, ids, LABEL_MANIPULATED)
            _write_records(pool_path, header, rows)
            log(f"[evaluate] full-pool scores for {len(ids)} images")

    for kind, levels in (("noise", cfg.noise_variances), ("jpeg", cfg.jpeg_qualities)):
        out_path = cfg.path("records", f"robust_{kind}.csv")
        if os.path.exists(out_path):
            log(f"[evaluate] cached {kind} robustness")
            continue
        ids = sorted(splits.s_t_t)
        jobs = []
        keys = []
        for level_idx, level in enumerate(levels):
            for label, path_of in ((LABEL_PRISTINE, lambda i: corpus_path(cfg, i)),
                                   (LABEL_MANIPULATED, lambda i: cfg.path("manipulated", i + ".png"))):
                for i in ids:
                    jobs.append((i, label, level_idx, level, path_of(i)))
                    keys.append((i, label, level))
        feats = _parallel_map(partial(_postprocessed_scores, cfg=cfg, kind=kind), jobs, cfg.jobs)
        d, f = predict_15c_batch(model, np.array(feats))
        rows = [[i, label, repr(float(level))] +
                [repr(float(v)) for v in d[k]] + [repr(float(f[k]))]
                for k, (i, label, level) in enumerate(keys)]
        _write_records(out_path, ["source_id", "label", "level", *CLASSIFIER_COLUMNS], rows)
        log(f"[evaluate] {kind} robustness over {levels}")


def _attack_one(job, cfg: ExperimentConfig, model: OneHalfClassModel, kind: str):
    img_id, path = job
    img = load_image(path)
    target = AttackTarget(kind, model)
    result = run_attack(target, img, cfg.attack_cfg, cfg.spam)
    out_path = cfg.path("attacked", kind, img_id + ".png")
    save_image(result.attacked, out_path)
    p = result.final_scores
    return [img_id, int(result.success), result.iterations,
            repr(result.mse), repr(result.pixel_change_fraction),
            repr(p.d[0]), repr(p.d[1]), repr(p.d[2]), repr(p.f)]


def stage_attack(cfg: ExperimentConfig, log=print) -> None:
    """Run the evasion attack against each configured target."""
    model, splits = _load_trained(cfg, "attack")
    ids = sorted(splits.s_t_t)[:cfg.attack_count]
    os.makedirs(cfg.path("records"), exist_ok=True)
    for kind in cfg.attack_targets:
        out_csv = cfg.path("records", f"attack_{kind}.csv")
        if os.path.exists(out_csv):
            log(f"[attack] cached target {kind}")
            continue
        os.makedirs(cfg.path("attacked", kind), exist_ok=True)
        jobs = [(i, cfg.path("manipulated", i + ".png")) for i in ids]
        rows = _parallel_map(partial(_attack_one, cfg=cfg, model=model, kind=kind), jobs, cfg.jobs)
        _write_records(out_csv, ["source_id", "success", "iterations", "mse",
                                 "pixel_change_fraction", *CLASSIFIER_COLUMNS], rows)
        n_ok = sum(int(r[1]) for r in rows)
        log(f"[attack] target {kind}: {n_ok}/{len(rows)} successful")


# --- report ---

def _read_records(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def _scores_and_labels(rows, col: int):
    scores = np.array([float(r[col]) for r in rows])
    labels = np.array([int(r[1]) for r in rows])
    return scores, labels


def _detection_scores(scores: np.ndarray, column: str) -> np.ndarray:
    """Flip pristine-positive outputs so larger always means more manipulated."""
    return scores if column == "d3" else -scores


def compute_report(cfg: ExperimentConfig) -> dict:
    """Aggregate the per-image records into the report tables."""
    records = cfg.path("records")
    report: dict = {"auc": {}, "robustness": {}, "attack": {}}
    header, rows = _read_records(os.path.join(records, "test_scores.csv"))
    for column, name in zip(CLASSIFIER_COLUMNS, CLASSIFIER_NAMES):
        col = header.index(column)
        scores, labels = _scores_and_labels(rows, col)
        det = _detection_scores(scores, column)
        det_labels = np.where(labels == LABEL_MANIPULATED, 1, -1)
        report["auc"][name] = roc_auc(det, det_labels).auc

    for kind in ("noise", "jpeg"):
        path = os.path.join(records, f"robust_{kind}.csv")
        if not os.path.exists(path):
            continue
        header, rows = _read_records(path)
        levels = sorted({float(r[2]) for r in rows})
        table = {}
        for level in levels:
            sub = [r for r in rows if float(r[2]) == level]
            accs = {}
            for column, name in zip(CLASSIFIER_COLUMNS, CLASSIFIER_NAMES):
                col = header.index(column)
                scores, labels = _scores_and_labels(sub, col)
                det = _detection_scores(scores, column)
                accs[name] = accuracy(det, np.where(labels == LABEL_MANIPULATED, 1, -1))
            table[level] = accs
        report["robustness"][kind] = table

    for kind in (TWO_CLASS_TARGET, COMPOSITE_TARGET):
        path = os.path.join(records, f"attack_{kind}.csv")
        if not os.path.exists(path):
            continue
        header, rows = _read_records(path)
        success = np.array([int(r[1]) for r in rows])
        mses = np.array([float(r[3]) for r in rows])
        fractions = np.array([float(r[4]) for r in rows])
        iters = np.array([int(r[2]) for r in rows])
        f_col = header.index("f")
        d1_col = header.index("d1")
        f_vals = np.array([float(r[f_col]) for r in rows])
        d1_vals = np.array([float(r[d1_col]) for r in rows])
        report["attack"][kind] = {
            "count": len(rows),
            "success_rate": float(success.mean()),
            "mean_mse": float(mses.mean()),
            "mean_pixel_percent": float(fractions.mean() * 100.0),
            "mean_iterations": float(iters.mean()),
            "accepted_by_composite": float((f_vals >= 0).mean()),
            "accepted_by_two_class": float((d1_vals >= 0).mean()),
        }
    return report


def _render_report(report: dict, cfg: ExperimentConfig) -> str:
    lines = [
        f"manipulation: {cfg.manipulation.kind}",
        f"spam truncation: T={cfg.spam.T}",
        "",
        "AUC on the final test split",
    ]
    for name in CLASSIFIER_NAMES:
        lines.append(f"  {name:<15} {report['auc'][name]:.4f}")
    for kind, label in (("jpeg", "JPEG quality"), ("noise", "noise variance")):
        if kind not in report["robustness"]:
            continue
        lines += ["", f"accuracy under {label}"]
        lines.append("  level            " + "  ".join(f"{n:<15}" for n in CLASSIFIER_NAMES))
        for level, accs in report["robustness"][kind].items():
            pretty = f"{level:g}"
            lines.append(f"  {pretty:<15}  " + "  ".join(f"{accs[n]:<15.4f}" for n in CLASSIFIER_NAMES))
    if report["attack"]:
        lines += ["", "attack outcomes"]
        for kind, stats in report["attack"].items():
            lines.append(
                f"  target {kind}: success {stats['success_rate'] * 100:.1f}% "
                f"on {stats['count']} images, mean MSE {stats['mean_mse']:.4f}, "
                f"mean pixels changed {stats['mean_pixel_percent']:.2f}%, "
                f"mean iterations {stats['mean_iterations']:.2f}"
            )
            lines.append(
                f"    post-attack acceptance: two-class {stats['accepted_by_two_class'] * 100:.1f}%, "
                f"composite {stats['accepted_by_composite'] * 100:.1f}%"
            )
    return "\n".join(lines) + "\n"


def stage_report(cfg: ExperimentConfig, log=print) -> dict:
    report = compute_report(cfg)
    out = cfg.path("report")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "auc.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["classifier", "auc"])
        for name in CLASSIFIER_NAMES:
            w.writerow([name, f"{report['auc'][name]:.6f}"])
    for kind in ("noise", "jpeg"):
        if kind not in report["robustness"]:
            continue
        with open(os.path.join(out, f"robustness_{kind}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level"] + [f"acc_{n}" for n in CLASSIFIER_NAMES])
            for level, accs in report["robustness"][kind].items():
                w.writerow([f"{level:g}"] + [f"{accs[n]:.6f}" for n in CLASSIFIER_NAMES])
    if report["attack"]:
        with open(os.path.join(out, "attack_summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target", "count", "success_rate", "mean_mse", "mean_pixel_percent",
                        "mean_iterations", "accepted_by_two_class", "accepted_by_composite"])
            for kind, s in report["attack"].items():
                w.writerow([kind, s["count"], f"{s['success_rate']:.6f}", f"{s['mean_mse']:.6f}",
                            f"{s['mean_pixel_percent']:.6f}", f"{s['mean_iterations']:.6f}",
                            f"{s['accepted_by_two_class']:.6f}", f"{s['accepted_by_composite']:.6f}"])
    text = _render_report(report, cfg)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(text)
    log(text)
    return report


_STAGE_FUNCS = {
    "prepare": stage_prepare,
    "extract": stage_extract,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "attack": stage_attack,
    "report": stage_report,
}


def run_experiment(cfg: ExperimentConfig, stages=STAGES, dry_run: bool = False, log=print) -> None:
    """Run the requested stages in pipeline order (all of them by default)."""
    ordered = [s for s in STAGES if s in stages]
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}; valid: {STAGES}")
    if dry_run:
        log(f"config ok; corpus={cfg.corpus_dir} out={cfg.out_dir} "
            f"manipulation={cfg.manipulation.kind} seed={cfg.seed} jobs={cfg.jobs}")
        for s in ordered:
            log(f"  would run: {s}")
        return
    for s in ordered:
        _STAGE_FUNCS[s](cfg, log=log)
