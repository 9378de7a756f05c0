"""Command-line entry point.

Every subcommand reads one run configuration (JSON file, then ``--seed`` and
``--set key=value`` overrides), writes its artifacts under ``--out`` and
returns a distinct nonzero exit code per failure class. Log verbosity comes
from the ``PGSLEEPNET_LOG`` environment variable (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis as an
from . import autodiff as ad
from . import model as mdl
from .features import featurize_recording, sequence_arrays
from .gsp import save_adjacency_csv
from .ingest import (
    AlignmentError,
    EdfError,
    LabelError,
    SyntheticSpec,
    concatenate,
    generate_synthetic_dataset,
    planted_factor_graphs,
    read_dataset,
    read_edf,
    read_hypnogram,
    segment_epochs,
    write_dataset,
)
from .ingest.dataset import DEFAULT_BANDS
from .training import (
    DivergenceError,
    FoldPlanError,
    TrainConfig,
    cross_validate,
    evaluate_loss,
    make_fold_plan,
    sub_seed,
    train_model,
    write_history_csv,
)

log = logging.getLogger("pgsleepnet")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_DATA = 5
EXIT_DIVERGED = 6
EXIT_CHECK = 7

HEATMAP_SCALE = 16
GRADCHECK_TOL = 1e-4


class ConfigError(ValueError):
    pass


class MissingFileError(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    """Training hyperparameters plus data, split and analysis settings.

    The defaults are the desk-scale profile used for synthetic runs; the
    full-size network is ``beta=256, K_gwat=20, lr=0.001, batch_size=1024``.
    ``pgl_weight`` is 10x below the training default: at 0.001 several seeds
    drive ``w_P``/``w_Q`` into the dead ReLU region and the learned graphs
    collapse to uniform.
    """

    # training (mirrors TrainConfig)
    lr: float = 0.005
    batch_size: int = 32
    epochs: int = 30
    K: int = 3
    F_out: int = 10
    beta: int = 64
    K_gwat: int = 8
    dropout: float = 0.6
    d: int = 4
    pgl_weight: float = 0.0001
    seed: int = 0
    boundary: str = "replicate"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # data
    dataset: str | None = None
    checkpoint: str | None = None
    graphs: str | None = None
    channels: list[str] | None = None
    bands: list[list[float]] = field(default_factory=lambda: [list(b) for b in DEFAULT_BANDS])
    label_standard: str = "RK"
    # splits
    split: str = "random"  # random | subject
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    scheme: str = "kfold"
    n_folds: int = 4
    # synthetic data
    synth_classes: int = 5
    synth_P: int = 9
    synth_Q: int = 6
    synth_F_de: int = 9
    synth_samples_per_class: int = 200
    synth_sigma: float = 0.3
    synth_subjects: int = 4
    graph_density: float = 0.2
    graph_weight_low: float = 2.0
    graph_weight_high: float = 6.0
    graph_normalize: bool = True
    # analysis
    threshold: float = 0.4
    thresholds: list[float] = field(default_factory=lambda: list(an.DEFAULT_THRESHOLDS))
    eeg_channels: list[str] | None = None

    @classmethod
    def keys(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(data) - cls.keys())
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.train_config()  # validates the training fields
        if cfg.split not in ("random", "subject"):
            raise ConfigError(f"split must be 'random' or 'subject', got {cfg.split!r}")
        if not (0 < cfg.val_fraction < 1 and 0 < cfg.test_fraction < 1 and cfg.val_fraction + cfg.test_fraction < 1):
            raise ConfigError("val_fraction and test_fraction must be positive and sum below 1")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def train_config(self) -> TrainConfig:
        kw = {k: getattr(self, k) for k in TrainConfig.field_names()}
        try:
            return TrainConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def synthetic_spec(self) -> SyntheticSpec:
        data_seed = sub_seed(self.seed, "data")
        graphs = planted_factor_graphs(
            self.synth_classes,
            self.synth_P,
            self.synth_Q,
            seed=data_seed,
            density=self.graph_density,
            weight_range=(self.graph_weight_low, self.graph_weight_high),
            normalize=self.graph_normalize,
        )
        return SyntheticSpec(
            num_classes=self.synth_classes,
            Q=self.synth_Q,
            P=self.synth_P,
            F_de=self.synth_F_de,
            samples_per_class=self.synth_samples_per_class,
            sigma=self.synth_sigma,
            seed=data_seed,
            num_subjects=self.synth_subjects,
            graphs=graphs,
        )


def _parse_value(key: str, text: str, current):
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text  # bare strings
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    return value


def load_run_config(path: str | None, seed: int | None, overrides: list[str]) -> RunConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise MissingFileError(f"config file not found: {path}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"malformed config {path}: top level must be an object")
    defaults = RunConfig().to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        key = key.strip()
        if key not in defaults:
            raise ConfigError(f"unknown config keys: {key}")
        data[key] = _parse_value(key, text, defaults[key])
    if seed is not None:
        data["seed"] = seed
    try:
        cfg = RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for key in ("dataset", "checkpoint", "graphs"):
        value = getattr(cfg, key)
        if value is not None and not Path(value).is_file():
            raise MissingFileError(f"{key} not found: {value}")
    return cfg


# ---------------------------------------------------------------------------
# artifacts


def emit_heatmap(matrix, path, scale: int = HEATMAP_SCALE) -> None:
    """Binary PPM (P6), grayscale mapped linearly from min (black) to max
    (white), each cell drawn as a ``scale x scale`` block. A constant matrix
    renders as uniform mid-gray (128)."""
    M = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if M.ndim != 2:
        raise ValueError("heatmap needs a 2-d matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("heatmap matrix has non-finite entries")
    lo, hi = M.min(), M.max()
    if hi > lo:
        gray = np.rint((M - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        gray = np.full(M.shape, 128, dtype=np.uint8)
    gray = np.repeat(np.repeat(gray, scale, axis=0), scale, axis=1)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def _fingerprint(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<i8").tobytes())
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    an.write_metrics_json(path, obj)


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} given (use --{what} or the '{what}' config key)")
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"{what} not found: {path}")
    return p


def _load_sequences(cfg: RunConfig):
    ds = read_dataset(_require(cfg.dataset, "dataset"))
    X, y, subjects = sequence_arrays(ds, cfg.d, cfg.boundary)
    if len(y) == 0:
        raise ValueError("dataset yields no sequence windows")
    return ds, X, y, subjects


def _split(cfg: RunConfig, y: np.ndarray, subjects: np.ndarray):
    rng = np.random.default_rng(sub_seed(cfg.seed, "split"))
    if cfg.split == "random":
        order = rng.permutation(len(y))
        n_te = max(1, int(round(cfg.test_fraction * len(y))))
        n_va = max(1, int(round(cfg.val_fraction * len(y))))
        if n_te + n_va >= len(y):
            raise ValueError("dataset too small for a train/val/test split")
        te, va, tr = order[:n_te], order[n_te : n_te + n_va], order[n_te + n_va :]
        return np.sort(tr), np.sort(va), np.sort(te)
    subj = rng.permutation(np.unique(subjects))
    if subj.size < 3:
        raise ValueError("subject split needs at least 3 subjects")
    n_te = max(1, int(round(cfg.test_fraction * subj.size)))
    n_va = max(1, int(round(cfg.val_fraction * subj.size)))
    if n_te + n_va >= subj.size:
        n_te, n_va = 1, 1
    te_s, va_s = subj[:n_te], subj[n_te : n_te + n_va]
    te = np.nonzero(np.isin(subjects, te_s))[0]
    va = np.nonzero(np.isin(subjects, va_s))[0]
    tr = np.nonzero(~np.isin(subjects, np.r_[te_s, va_s]))[0]
    return tr, va, te


def _checkpoint_meta(cfg: RunConfig, model_cfg: mdl.ModelConfig, ds, X, y, extra: dict) -> dict:
    meta = {
        "kind": "checkpoint",
        "model_config": model_cfg.to_dict(),
        "run_config": cfg.to_dict(),
        "label_names": list(ds.label_names),
        "channel_names": list(ds.channel_names),
        "dataset_sha256": _fingerprint(X, y),
    }
    meta.update(extra)
    return meta


def _load_checkpoint(path: Path):
    params, meta = ad.load_parameters(path)
    if meta.get("kind") != "checkpoint" or "model_config" not in meta:
        raise ValueError(f"{path}: not a model checkpoint")
    return params, mdl.ModelConfig(**meta["model_config"]), meta


def _evaluation_subset(meta: dict, X, y, subset: str):
    if subset == "all":
        return np.arange(len(y))
    same = meta.get("dataset_sha256") == _fingerprint(X, y)
    if "test_indices" in meta and same:
        return np.asarray(meta["test_indices"], dtype=np.int64)
    if subset == "test":
        raise ValueError("checkpoint has no test split for this dataset; use --subset all")
    log.warning("checkpoint split does not match this dataset; evaluating all windows")
    return np.arange(len(y))


def _write_eval_artifacts(out: Path, y, probs, n_classes: int, names, prefix: str = "") -> dict:
    preds = probs.argmax(axis=1)
    cm = an.confusion_matrix(y, preds, n_classes)
    metrics = an.classification_metrics(cm)
    curves = an.curve_metrics(probs, y, n_classes)
    metrics.update(
        {
            "n_scored": int(len(y)),
            "roc_auc": {names[k]: v for k, v in curves["roc_auc"].items()},
            "auprc": {names[k]: v for k, v in curves["auprc"].items()},
            "macro_roc_auc": curves["macro_roc_auc"],
            "macro_auprc": curves["macro_auprc"],
            "skipped_classes": [names[k] for k in curves["skipped_classes"]],
        }
    )
    _write_json(out / f"{prefix}metrics.json", metrics)
    an.write_metrics_csv(out / f"{prefix}metrics.csv", metrics, names)
    an.write_confusion_csv(out / f"{prefix}confusion.csv", cm, names)
    an.write_curves_csv(out / f"{prefix}curves.csv", probs, y, names)
    return metrics


def _eeg_mask(cfg: RunConfig, channel_names) -> np.ndarray:
    names = list(channel_names)
    if cfg.eeg_channels is not None:
        return np.array([n in cfg.eeg_channels for n in names], dtype=bool)
    mask = an.eeg_mask_from_names(names)
    if not mask.any():
        log.warning("no channel name contains 'EEG'; treating every channel as EEG")
        mask[:] = True
    return mask


def _graph_bundle(cfg: RunConfig) -> tuple[an.GraphBundle, list[str]]:
    params, model_cfg, meta = _load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    ds, X, y, _ = _load_sequences(cfg)
    WP, WQ = mdl.learned_graphs(X, params, model_cfg)
    preds = mdl.predict_proba(X, params, model_cfg).argmax(axis=1)
    bundle = an.GraphBundle(WP, WQ, y, preds, _eeg_mask(cfg, ds.channel_names), list(ds.channel_names))
    return bundle, list(ds.label_names)


def _save_bundle(path: Path, bundle: an.GraphBundle, names) -> None:
    ad.write_container(
        path,
        {
            "W_P": bundle.W_P,
            "W_Q": bundle.W_Q,
            "labels": bundle.labels.astype(np.float64),
            "predicted": (bundle.predicted if bundle.predicted is not None else bundle.labels).astype(np.float64),
            "eeg_mask": bundle.eeg_mask.astype(np.float64),
        },
        {"kind": "graph_bundle", "label_names": list(names), "channel_names": bundle.channel_names},
    )


def _load_bundle(path: Path) -> tuple[an.GraphBundle, list[str]]:
    arrays, meta = ad.read_container(path)
    if meta.get("kind") != "graph_bundle":
        raise ValueError(f"{path}: not a graph bundle")
    bundle = an.GraphBundle(
        arrays["W_P"],
        arrays["W_Q"],
        arrays["labels"].astype(np.int64),
        arrays["predicted"].astype(np.int64),
        arrays["eeg_mask"].astype(bool),
        meta.get("channel_names", []),
    )
    return bundle, meta["label_names"]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig, args, out: Path) -> int:
    spec = cfg.synthetic_spec()
    ds = generate_synthetic_dataset(spec)
    write_dataset(out / "dataset.pgsn", ds)
    for c, pair in enumerate(spec.graphs):
        save_adjacency_csv(out / f"planted_W_P_class{c}.csv", pair.gP.W)
        save_adjacency_csv(out / f"planted_W_Q_class{c}.csv", pair.gQ.W)
    print(f"wrote {out / 'dataset.pgsn'}: {ds.X_all.shape[0]} samples, shape {list(ds.X_all.shape[1:])}")
    return EXIT_OK


def cmd_featurize(cfg: RunConfig, args, out: Path) -> int:
    if not args.edf or len(args.edf) != len(args.hypnogram or []):
        raise ConfigError("featurize needs one --hypnogram per --edf")
    parts = []
    for subject, (edf_path, hyp_path) in enumerate(zip(args.edf, args.hypnogram)):
        rec = read_edf(_require(edf_path, "edf"))
        labels = read_hypnogram(_require(hyp_path, "hypnogram"))
        epochs = segment_epochs(rec, labels, cfg.channels, cfg.label_standard)
        parts.append(featurize_recording(epochs, [tuple(b) for b in cfg.bands], subject=subject))
    ds = concatenate(parts)
    write_dataset(out / "dataset.pgsn", ds)
    print(f"wrote {out / 'dataset.pgsn'}: shape {list(ds.X_all.shape)}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args, out: Path) -> int:
    ds, X, y, subjects = _load_sequences(cfg)
    tr, va, te = _split(cfg, y, subjects)
    n_classes = len(ds.label_names)
    tcfg = cfg.train_config()
    res = train_model(X[tr], y[tr], X[va], y[va], tcfg, n_classes)
    write_history_csv(out / "history.csv", res.history)
    meta = _checkpoint_meta(
        cfg, res.model_config, ds, X, y,
        {"best_epoch": res.best_epoch, "test_indices": te.tolist(), "val_indices": va.tolist()},
    )
    ad.save_parameters(out / "checkpoint.pgsn", res.params, meta)
    _, acc, _, probs = evaluate_loss(X[te], y[te], res.params, res.model_config, tcfg.pgl_weight)
    _write_eval_artifacts(out, y[te], probs, n_classes, list(ds.label_names), prefix="test_")
    best = res.history[res.best_epoch - 1]
    print(f"best epoch {res.best_epoch}: val_acc {best['val_acc']:.4f}; held-out test accuracy {acc:.4f}")
    return EXIT_OK


def cmd_crossval(cfg: RunConfig, args, out: Path) -> int:
    ds, X, y, subjects = _load_sequences(cfg)
    try:
        plan = make_fold_plan(subjects, cfg.scheme, cfg.n_folds, cfg.seed)
    except FoldPlanError as exc:
        raise ConfigError(str(exc)) from None
    n_classes = len(ds.label_names)
    res = cross_validate(X, y, subjects, plan, cfg.train_config(), n_classes)
    names = list(ds.label_names)
    for i, (hist, params) in enumerate(zip(res.histories, res.fold_params)):
        write_history_csv(out / f"fold{i}_history.csv", hist)
        model_cfg = cfg.train_config().model_config(*X.shape[1:], n_classes)
        meta = _checkpoint_meta(cfg, model_cfg, ds, X, y, {"fold": i, "fold_plan": asdict(plan.folds[i])})
        ad.save_parameters(out / f"fold{i}_checkpoint.pgsn", params, meta)
    _write_json(out / "folds.json", {"scheme": plan.scheme, "folds": res.fold_metrics})
    _write_eval_artifacts(out, res.labels, res.probabilities, n_classes, names, prefix="pooled_")
    m = res.pooled_metrics
    print(f"{len(plan.folds)} folds: pooled accuracy {m['accuracy']:.4f}, macro F1 {m['macro_f1']:.4f}, kappa {m['kappa']:.4f}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args, out: Path) -> int:
    params, model_cfg, meta = _load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    ds, X, y, _ = _load_sequences(cfg)
    idx = _evaluation_subset(meta, X, y, args.subset)
    probs = mdl.predict_proba(X[idx], params, model_cfg)
    m = _write_eval_artifacts(out, y[idx], probs, model_cfg.n_classes, list(ds.label_names))
    print(f"accuracy {m['accuracy']:.4f}, macro F1 {m['macro_f1']:.4f}, kappa {m['kappa']:.4f} on {len(idx)} windows")
    return EXIT_OK


def cmd_export_graphs(cfg: RunConfig, args, out: Path) -> int:
    bundle, names = _graph_bundle(cfg)
    _save_bundle(out / "graphs.pgsn", bundle, names)
    avg = an.average_class_graphs(bundle, len(names))
    for c in sorted(avg.W_P):
        for kind, W in (("W_P", avg.W_P[c]), ("W_Q", avg.W_Q[c])):
            stem = f"{kind}_{names[c]}"
            save_adjacency_csv(out / f"{stem}.csv", W)
            B = an.binarize_graph(W, cfg.threshold)
            np.savetxt(out / f"{stem}_bin.csv", B, delimiter=",", fmt="%d")
            emit_heatmap(W, out / f"{stem}.ppm")
    print(f"exported class-averaged graphs for {len(avg.W_P)} classes to {out}")
    return EXIT_OK


def cmd_analyze_thresholds(cfg: RunConfig, args, out: Path) -> int:
    if args.planted:
        bundle = an.planted_graph_bundle(seed=sub_seed(cfg.seed, "planted"))
        names = list(an.STAGE_NAMES)
    elif cfg.graphs is not None:
        bundle, names = _load_bundle(_require(cfg.graphs, "graphs"))
    else:
        bundle, names = _graph_bundle(cfg)
    scan = an.threshold_pvalue_scan(bundle, cfg.thresholds)
    an.write_scan_csv(out / "threshold_scan.csv", scan, names)
    _write_json(
        out / "threshold_scan.json",
        {"mean_nonzero_p": {repr(k): v for k, v in scan.mean_p.items()}, "recommended_threshold": scan.recommended},
    )
    print(f"recommended threshold {scan.recommended}")
    return EXIT_OK


def run_gradcheck(seed: int = 0, pgl_weight: float = 0.01) -> tuple[float, float]:
    """Finite-difference check of the joint loss over every parameter at tiny
    dims; returns ``(max relative error, seconds)``."""
    from .training import joint_loss

    cfg = mdl.ModelConfig(P=3, Q=3, F_de=2, F_out=2, beta=4, K_gwat=2)
    params = mdl.init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    X = rng.standard_normal((4, cfg.P, cfg.Q, cfg.F_de))
    y = rng.integers(0, cfg.n_classes, 4)

    def loss():
        trace = mdl.model_forward(X, params, cfg, "train", np.random.default_rng(seed + 2))
        return joint_loss(trace, y, pgl_weight)[0]

    t0 = time.perf_counter()
    err = ad.parameters_grad_check(loss, params.values())
    return err, time.perf_counter() - t0


def cmd_gradcheck(cfg: RunConfig, args, out: Path) -> int:
    err, secs = run_gradcheck(cfg.seed)
    ok = err < GRADCHECK_TOL
    print(f"max relative error {err:.3e} ({secs:.1f} s): {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic product-graph dataset"),
    "featurize": (cmd_featurize, "EDF recordings + hypnograms -> feature dataset"),
    "train": (cmd_train, "train on a single train/val/test split"),
    "crossval": (cmd_crossval, "subject-wise cross-validation"),
    "evaluate": (cmd_evaluate, "metrics, curves and confusion matrix for a checkpoint"),
    "export-graphs": (cmd_export_graphs, "class-averaged learned graphs as CSV and PPM"),
    "analyze-thresholds": (cmd_analyze_thresholds, "binarization threshold p-value scan"),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient check at tiny dims"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--dataset", help="feature dataset container")
    common.add_argument("--checkpoint", help="model checkpoint container")

    parser = argparse.ArgumentParser(prog="pgsleepnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    parsers = {name: sub.add_parser(name, parents=[common], help=h) for name, (_, h) in COMMANDS.items()}
    parsers["featurize"].add_argument("--edf", action="append", help="EDF recording (repeatable)")
    parsers["featurize"].add_argument("--hypnogram", action="append", help="hypnogram for the matching --edf")
    parsers["evaluate"].add_argument(
        "--subset", choices=("auto", "test", "all"), default="auto",
        help="windows to score; 'auto' uses the checkpoint's test split when the dataset matches",
    )
    parsers["analyze-thresholds"].add_argument("--graphs", help="graph bundle from export-graphs")
    parsers["analyze-thresholds"].add_argument("--planted", action="store_true", help="scan planted synthetic graphs")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("PGSLEEPNET_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    overrides = list(args.set)
    for key in ("dataset", "checkpoint", "graphs"):
        if getattr(args, key, None) is not None:
            overrides.append(f"{key}={json.dumps(getattr(args, key))}")
    handler = COMMANDS[args.command][0]
    try:
        cfg = load_run_config(args.config, args.seed, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        return handler(cfg, args, out)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingFileError, FileNotFoundError) as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (EdfError, LabelError, AlignmentError, KeyError, ValueError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
