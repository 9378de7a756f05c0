"""Classification metrics, ROC/PR curves, class-averaged learned graphs and the
binarization threshold scan."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats

STAGE_NAMES = ("W", "N1", "N2", "N3", "REM")
DEFAULT_THRESHOLDS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
REGIONS = ("EEG-EEG", "EEG-nonEEG", "temporal")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("confusion matrix has negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(y_true, y_pred, n_classes: int = 5) -> ConfusionMatrix:
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return ConfusionMatrix(counts)


def classification_metrics(cm: ConfusionMatrix) -> dict:
    """Accuracy, Cohen's kappa, per-class and macro F1 from a confusion matrix.

    Classes with no true and no predicted samples get F1 = 0.
    """
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(c)
    pred = c.sum(axis=0)
    true = c.sum(axis=1)
    denom = pred + true  # 2TP / (2TP + FP + FN) == 2PR / (P + R)
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    p_o = tp.sum() / total
    p_e = float(pred @ true) / total**2
    kappa = (p_o - p_e) / (1 - p_e) if p_e < 1 else (1.0 if p_o == 1 else 0.0)
    return {
        "accuracy": float(p_o),
        "kappa": float(kappa),
        "macro_f1": float(f1.mean()),
        "per_class_f1": [float(v) for v in f1],
    }


# ---------------------------------------------------------------------------
# curves


def _ranked_counts(scores: np.ndarray, positive: np.ndarray):
    """Cumulative TP/FP at each distinct threshold, highest score first."""
    order = np.argsort(-scores, kind="mergesort")
    s, pos = scores[order], positive[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(pos)[last].astype(np.float64)
    fp = np.cumsum(~pos)[last].astype(np.float64)
    return tp, fp, s[last]


def roc_curve(scores, positive):
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    tp, fp, thr = _ranked_counts(scores, positive)
    tpr = np.r_[0.0, tp / tp[-1]]
    fpr = np.r_[0.0, fp / fp[-1]]
    return fpr, tpr, np.r_[np.inf, thr]


def pr_curve(scores, positive):
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    tp, fp, thr = _ranked_counts(scores, positive)
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    return recall, precision, thr


def roc_auc(scores, positive) -> float:
    """Trapezoidal ROC area.

    Summed on integer counts with one final division, so the result is the
    correctly rounded pairwise-ranking probability (ties count half).
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    tp, fp, _ = _ranked_counts(scores, positive)
    tp, fp = np.r_[0, tp].astype(np.int64), np.r_[0, fp].astype(np.int64)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * int(tp[-1]) * int(fp[-1]))


def average_precision(scores, positive) -> float:
    """Step-wise area under the PR curve: ``sum (R_n - R_{n-1}) P_n``."""
    recall, precision, _ = pr_curve(scores, positive)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def curve_metrics(scores, labels, n_classes: int | None = None) -> dict:
    """One-vs-rest ROC-AUC and AUPRC per class, plus their macro averages.

    Classes without both a positive and a negative sample are flagged and left
    out of the macro averages.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = scores.shape[1] if n_classes is None else n_classes
    auc, ap, skipped = {}, {}, []
    for k in range(n_classes):
        pos = labels == k
        if pos.all() or not pos.any():
            skipped.append(k)
            continue
        auc[k] = roc_auc(scores[:, k], pos)
        ap[k] = average_precision(scores[:, k], pos)
    return {
        "roc_auc": auc,
        "auprc": ap,
        "macro_roc_auc": float(np.mean(list(auc.values()))) if auc else float("nan"),
        "macro_auprc": float(np.mean(list(ap.values()))) if ap else float("nan"),
        "skipped_classes": skipped,
    }


# ---------------------------------------------------------------------------
# learned graphs


@dataclass
class GraphBundle:
    W_P: np.ndarray  # (N, P, P)
    W_Q: np.ndarray  # (N, Q, Q)
    labels: np.ndarray  # true class per sample
    predicted: np.ndarray | None = None
    eeg_mask: np.ndarray | None = None  # (Q,) True for EEG channels
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.W_P = np.asarray(self.W_P, dtype=np.float64)
        self.W_Q = np.asarray(self.W_Q, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.W_P) == len(self.W_Q) == len(self.labels)):
            raise ValueError("W_P, W_Q and labels disagree on the number of samples")
        if self.eeg_mask is None:
            self.eeg_mask = np.ones(self.W_Q.shape[-1], dtype=bool)
        self.eeg_mask = np.asarray(self.eeg_mask, dtype=bool)


def eeg_mask_from_names(names: Sequence[str]) -> np.ndarray:
    return np.array(["EEG" in n.upper() for n in names], dtype=bool)


@dataclass
class ClassGraphs:
    W_P: dict[int, np.ndarray]
    W_Q: dict[int, np.ndarray]


def average_class_graphs(bundle: GraphBundle, n_classes: int = 5, symmetrize: bool = True) -> ClassGraphs:
    """Elementwise mean of each true class's graphs, optionally symmetrized."""
    WP, WQ = {}, {}
    for c in range(n_classes):
        sel = bundle.labels == c
        if not sel.any():
            warnings.warn(f"class {c} has no samples; omitted from class averages")
            continue
        mp, mq = bundle.W_P[sel].mean(axis=0), bundle.W_Q[sel].mean(axis=0)
        if symmetrize:
            mp, mq = (mp + mp.T) / 2, (mq + mq.T) / 2
        WP[c], WQ[c] = mp, mq
    return ClassGraphs(WP, WQ)


def binarize_graph(W, thr: float) -> np.ndarray:
    """1 where ``W > thr`` (strict), 0 elsewhere; diagonal forced to 0."""
    if not 0.0 <= thr <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {thr}")
    W = np.asarray(W, dtype=np.float64)
    B = (W > thr).astype(np.int64)
    n = W.shape[-1]
    B[..., np.arange(n), np.arange(n)] = 0
    return B


def _region_mask(region: str, eeg: np.ndarray, P: int) -> np.ndarray | None:
    if region == "temporal":
        return ~np.eye(P, dtype=bool)
    off = ~np.eye(eeg.size, dtype=bool)
    if region == "EEG-EEG":
        m = np.outer(eeg, eeg) & off
    elif region == "EEG-nonEEG":
        m = np.outer(eeg, ~eeg) | np.outer(~eeg, eeg)
    else:
        raise ValueError(f"unknown region {region!r}")
    return m if m.any() else None


def region_density(bundle: GraphBundle, region: str, thr: float) -> np.ndarray | None:
    """Per-sample fraction of edges above ``thr`` inside a region."""
    mask = _region_mask(region, bundle.eeg_mask, bundle.W_P.shape[-1])
    if mask is None:
        return None
    W = bundle.W_P if region == "temporal" else bundle.W_Q
    return binarize_graph(W, thr)[:, mask].mean(axis=1)


def welch_pvalue(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Two-sided Welch t-test p-value; ``(1.0, True)`` when both groups are constant."""
    if np.var(a) == 0 and np.var(b) == 0:
        return 1.0, True
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue), False


@dataclass
class ThresholdScan:
    rows: list[dict]  # pair, region, threshold, p, flagged
    mean_p: dict[float, float]
    recommended: float | None


def threshold_pvalue_scan(
    bundle: GraphBundle,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    pairs: Sequence[tuple[int, int]] | None = None,
    regions: Sequence[str] = REGIONS,
) -> ThresholdScan:
    """Welch t-tests on per-sample region edge densities for each stage pair,
    region and threshold. The recommended threshold minimizes the mean of the
    nonzero p-values."""
    present = sorted(set(bundle.labels.tolist()))
    if pairs is None:
        pairs = list(combinations(present, 2))
    for a, b in pairs:
        for c in (a, b):
            if np.sum(bundle.labels == c) < 2:
                raise ValueError(f"class {c} needs at least 2 samples for the t-test")
    rows = []
    for thr in thresholds:
        dens = {r: region_density(bundle, r, thr) for r in regions}
        for a, b in pairs:
            for r in regions:
                d = dens[r]
                if d is None:
                    continue
                p, flagged = welch_pvalue(d[bundle.labels == a], d[bundle.labels == b])
                rows.append({"pair": (a, b), "region": r, "threshold": float(thr), "p": p, "flagged": flagged})
    mean_p = {}
    for thr in thresholds:
        ps = [row["p"] for row in rows if row["threshold"] == float(thr) and row["p"] > 0]
        mean_p[float(thr)] = float(np.mean(ps)) if ps else float("nan")
    finite = {t: v for t, v in mean_p.items() if np.isfinite(v)}
    recommended = min(finite, key=lambda t: (finite[t], t)) if finite else None
    return ThresholdScan(rows, mean_p, recommended)


def planted_graph_bundle(
    num_classes: int = 5,
    Q: int = 10,
    n_eeg: int = 7,
    P: int = 9,
    samples_per_class: int = 20,
    seed: int = 0,
    keep_prob: float = 0.85,
) -> GraphBundle:
    """Graphs whose classes own disjoint edge sets of distinct sizes (class
    ``c`` gets ``c + 1`` edges per region). Planted edges take values in
    (0.45, 0.95) with probability ``keep_prob``; everything else lies in
    (0, 0.35)."""
    rng = np.random.default_rng(seed)
    eeg = np.arange(Q) < n_eeg

    def edges(mask):
        iu = np.argwhere(np.triu(mask))
        need = num_classes * (num_classes + 1) // 2
        if len(iu) < need:
            raise ValueError("region too small for disjoint planted edges")
        iu = iu[rng.permutation(len(iu))]
        out, start = [], 0
        for c in range(num_classes):
            out.append(iu[start : start + c + 1])
            start += c + 1
        return out

    q_sets = [edges(_region_mask("EEG-EEG", eeg, P)), edges(_region_mask("EEG-nonEEG", eeg, P))]
    p_sets = edges(~np.eye(P, dtype=bool))

    def sample(n, sets_per_region, c):
        W = rng.uniform(0.0, 0.35, (n, n))
        for sets in sets_per_region:
            for i, j in sets[c]:
                if rng.random() < keep_prob:
                    W[i, j] = rng.uniform(0.45, 0.95)
        W = np.triu(W, 1)
        return W + W.T

    WP, WQ, labels = [], [], []
    for c in range(num_classes):
        for _ in range(samples_per_class):
            WQ.append(sample(Q, q_sets, c))
            WP.append(sample(P, [p_sets], c))
            labels.append(c)
    return GraphBundle(np.array(WP), np.array(WQ), np.array(labels), eeg_mask=eeg)


# ---------------------------------------------------------------------------
# file output


def write_metrics_json(path, metrics: dict) -> None:
    def clean(o):
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        return o

    with open(path, "w") as fh:
        json.dump(clean(metrics), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_metrics_csv(path, metrics: dict, class_names: Sequence[str] = STAGE_NAMES) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key in ("accuracy", "macro_f1", "kappa"):
            w.writerow([key, repr(metrics[key])])
        for name, v in zip(class_names, metrics["per_class_f1"]):
            w.writerow([f"f1_{name}", repr(v)])


def write_confusion_csv(path, cm: ConfusionMatrix, class_names: Sequence[str] = STAGE_NAMES) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *class_names])
        for name, row in zip(class_names, cm.counts):
            w.writerow([name, *row.tolist()])


def write_curves_csv(path, scores, labels, class_names: Sequence[str] = STAGE_NAMES) -> None:
    """Long-format ROC and PR point lists, one row per (curve, class, point)."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "class", "x", "y"])
        for k, name in enumerate(class_names):
            pos = labels == k
            if pos.all() or not pos.any():
                continue
            fpr, tpr, _ = roc_curve(scores[:, k], pos)
            for x, y in zip(fpr, tpr):
                w.writerow(["roc", name, repr(float(x)), repr(float(y))])
            rec, prec, _ = pr_curve(scores[:, k], pos)
            for x, y in zip(rec, prec):
                w.writerow(["pr", name, repr(float(x)), repr(float(y))])


def write_scan_csv(path, scan: ThresholdScan, class_names: Sequence[str] = STAGE_NAMES) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage_a", "stage_b", "region", "threshold", "p_value", "flagged"])
        for r in scan.rows:
            a, b = r["pair"]
            w.writerow([class_names[a], class_names[b], r["region"], r["threshold"], repr(r["p"]), int(r["flagged"])])
