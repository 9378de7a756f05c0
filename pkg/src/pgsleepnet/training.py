"""Joint-loss optimization, Adam, model selection and subject-wise cross-validation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .analysis import ConfusionMatrix, classification_metrics, confusion_matrix
from .autodiff import Tensor
from .model import ForwardTrace, ModelConfig, init_params, model_forward, pgl_loss

logger = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


class FoldPlanError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 64
    epochs: int = 100
    K: int = 3
    F_out: int = 10
    beta: int = 256
    K_gwat: int = 20
    dropout: float = 0.6
    d: int = 4
    pgl_weight: float = 0.001
    seed: int = 0
    boundary: str = "replicate"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("batch_size", "epochs", "K", "F_out", "beta", "K_gwat", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lr", "pgl_weight", "d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    def model_config(self, P: int, Q: int, F_de: int, n_classes: int = 5) -> ModelConfig:
        return ModelConfig(
            P=P, Q=Q, F_de=F_de, F_out=self.F_out, K=self.K, beta=self.beta,
            K_gwat=self.K_gwat, n_classes=n_classes, dropout=self.dropout,
        )


def sub_seed(seed: int, name: str) -> int:
    """Independent, reproducible seed for a named component."""
    return int(np.random.SeedSequence([seed, *name.encode()]).generate_state(1)[0])


# ---------------------------------------------------------------------------


def one_hot(labels, n_classes: int) -> np.ndarray:
    return np.eye(n_classes)[np.asarray(labels, dtype=np.int64)]


def joint_loss(trace: ForwardTrace, labels, pgl_weight: float) -> tuple[Tensor, dict]:
    """Cross-entropy plus weighted product-graph smoothness; both terms reported."""
    y = one_hot(labels, trace.X_o.shape[-1])
    ce = ad.cross_entropy_loss(trace.X_o, y)
    pgl = pgl_loss(trace.X0, trace.W_P, trace.W_Q)
    total = ce + pgl * pgl_weight if pgl_weight else ce
    return total, {"ce": ce.item(), "pgl": pgl.item()}


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update in place. Missing grads count as zero."""
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    model_config: ModelConfig
    history: list[dict]
    best_epoch: int


def evaluate_loss(X, y, params, cfg: ModelConfig, pgl_weight: float, batch_size: int = 256):
    """Mean joint loss, accuracy and predictions over a set, in eval mode."""
    n = len(y)
    total, correct, preds, probs = 0.0, 0, [], []
    for i in range(0, n, batch_size):
        trace = model_forward(X[i : i + batch_size], params, cfg, "eval")
        loss, _ = joint_loss(trace, y[i : i + batch_size], pgl_weight)
        nb = len(y[i : i + batch_size])
        total += loss.item() * nb
        p = trace.X_o.data
        probs.append(p)
        preds.append(p.argmax(axis=1))
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    probs = np.concatenate(probs) if probs else np.zeros((0, cfg.n_classes))
    acc = float(np.mean(preds == y)) if n else float("nan")
    return total / max(n, 1), acc, preds, probs


def train_model(
    X_train,
    y_train,
    X_val,
    y_val,
    config: TrainConfig,
    n_classes: int = 5,
    params: dict[str, Tensor] | None = None,
) -> TrainResult:
    """Mini-batch Adam on the joint loss, keeping the best-validation-accuracy
    parameters (ties go to the earlier epoch)."""
    X_train = np.asarray(X_train, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if len(y_train) == 0 or len(y_val) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if not (np.all(np.isfinite(X_train)) and np.all(np.isfinite(X_val))):
        raise ValueError("inputs contain non-finite values")
    _, P, Q, F = X_train.shape
    cfg = config.model_config(P, Q, F, n_classes)
    if params is None:
        params = init_params(cfg, sub_seed(config.seed, "init"))
    shuffle_rng = np.random.default_rng(sub_seed(config.seed, "shuffle"))
    dropout_rng = np.random.default_rng(sub_seed(config.seed, "dropout"))
    state = AdamState()
    history: list[dict] = []
    best_acc, best_epoch, best_params = -1.0, 0, None
    n = len(y_train)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum, pgl_sum, ce_sum, batches = 0.0, 0.0, 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            for p in params.values():
                p.zero_grad()
            try:
                trace = model_forward(X_train[idx], params, cfg, "train", dropout_rng)
            except np.linalg.LinAlgError as exc:
                raise DivergenceError(f"epoch {epoch}, batch {b}: {exc}") from None
            loss, parts = joint_loss(trace, y_train[idx], config.pgl_weight)
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"loss is not finite at epoch {epoch}, batch {b}")
            ad.backward(loss)
            try:
                adam_step(params, state, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}, batch {b}: {exc}") from None
            loss_sum += loss.item()
            pgl_sum += parts["pgl"]
            ce_sum += parts["ce"]
            batches += 1
        val_loss, val_acc, _, _ = evaluate_loss(X_val, y_val, params, cfg, config.pgl_weight)
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / batches,
            "train_ce": ce_sum / batches,
            "val_loss": val_loss,
            "val_acc": val_acc,
            "pgl_term": pgl_sum / batches,
        }
        history.append(row)
        logger.info(
            "epoch %d train_loss %.4f val_loss %.4f val_acc %.4f pgl %.3f",
            epoch, row["train_loss"], val_loss, val_acc, row["pgl_term"],
        )
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}

    return TrainResult(best_params, cfg, history, best_epoch)


HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_acc", "pgl_term")


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class Fold:
    train: list[int]
    val: list[int]
    test: list[int]


@dataclass
class FoldPlan:
    scheme: str
    folds: list[Fold]

    def validate(self) -> None:
        tested = []
        for i, f in enumerate(self.folds):
            tr, va, te = set(f.train), set(f.val), set(f.test)
            if tr & va or tr & te or va & te:
                raise FoldPlanError(f"fold {i}: subject overlap between train/val/test")
            if not te or not va or not tr:
                raise FoldPlanError(f"fold {i}: empty split")
            tested.extend(f.test)
        if len(tested) != len(set(tested)):
            raise FoldPlanError("a subject is tested in more than one fold")


def _chunks(subjects: list[int], k: int) -> list[list[int]]:
    """``k`` consecutive groups: ``ceil(n/k)`` subjects each with a short last
    group when that yields exactly ``k`` groups, otherwise balanced sizes."""
    n = len(subjects)
    size = math.ceil(n / k)
    groups = [subjects[i : i + size] for i in range(0, n, size)]
    if len(groups) != k:
        groups = [list(a) for a in np.array_split(np.array(subjects), k)]
    return groups


def make_fold_plan(subjects, scheme: str = "kfold", n_folds: int = 16, seed: int = 0) -> FoldPlan:
    """Subject-wise folds; each test fold gets a randomly drawn validation fold
    from the remaining ones and trains on the rest."""
    subjects = sorted({int(s) for s in subjects})
    if len(subjects) < 3:
        raise FoldPlanError("cross-validation needs at least 3 subjects")
    if scheme == "loso":
        groups = [[s] for s in subjects]
    elif scheme == "kfold":
        if not 3 <= n_folds <= len(subjects):
            raise FoldPlanError(f"n_folds must lie in [3, {len(subjects)}], got {n_folds}")
        groups = _chunks(subjects, n_folds)
    else:
        raise FoldPlanError(f"unknown scheme {scheme!r}")
    rng = np.random.default_rng(sub_seed(seed, "folds"))
    folds = []
    for i, test in enumerate(groups):
        others = [j for j in range(len(groups)) if j != i]
        v = others[rng.integers(len(others))]
        train = [s for j in others if j != v for s in groups[j]]
        folds.append(Fold(train, list(groups[v]), list(test)))
    plan = FoldPlan(scheme, folds)
    plan.validate()
    return plan


@dataclass
class CrossValResult:
    fold_metrics: list[dict]
    pooled_cm: ConfusionMatrix
    pooled_metrics: dict
    probabilities: np.ndarray
    labels: np.ndarray
    histories: list[list[dict]]
    fold_params: list[dict] = field(repr=False, default_factory=list)


def cross_validate(X, y, subjects, plan: FoldPlan, config: TrainConfig, n_classes: int = 5) -> CrossValResult:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    subjects = np.asarray(subjects, dtype=np.int64)
    plan.validate()
    fold_metrics, histories, all_probs, all_labels, fold_params = [], [], [], [], []
    pooled = np.zeros((n_classes, n_classes), dtype=np.int64)
    for i, fold in enumerate(plan.folds):
        tr = np.isin(subjects, fold.train)
        va = np.isin(subjects, fold.val)
        te = np.isin(subjects, fold.test)
        fold_cfg = replace(config, seed=sub_seed(config.seed, f"fold{i}"))
        res = train_model(X[tr], y[tr], X[va], y[va], fold_cfg, n_classes)
        _, _, preds, probs = evaluate_loss(X[te], y[te], res.params, res.model_config, config.pgl_weight)
        cm = confusion_matrix(y[te], preds, n_classes)
        pooled += cm.counts
        m = classification_metrics(cm)
        m.update({"fold": i, "test_subjects": fold.test, "val_subjects": fold.val, "best_epoch": res.best_epoch})
        fold_metrics.append(m)
        histories.append(res.history)
        all_probs.append(probs)
        all_labels.append(y[te])
        fold_params.append(res.params)
        logger.info("fold %d accuracy %.4f", i, m["accuracy"])
    pooled_cm = ConfusionMatrix(pooled)
    return CrossValResult(
        fold_metrics,
        pooled_cm,
        classification_metrics(pooled_cm),
        np.concatenate(all_probs),
        np.concatenate(all_labels),
        histories,
        fold_params,
    )
