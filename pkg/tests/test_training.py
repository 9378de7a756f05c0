import csv
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgsleepnet import autodiff as ad
from pgsleepnet import model as m
from pgsleepnet.autodiff import Tensor
from pgsleepnet.training import (
    HISTORY_COLUMNS,
    AdamState,
    DivergenceError,
    FoldPlan,
    FoldPlanError,
    TrainConfig,
    adam_step,
    cross_validate,
    joint_loss,
    make_fold_plan,
    one_hot,
    sub_seed,
    train_model,
    write_history_csv,
)

TINY = dict(F_out=2, beta=4, K_gwat=2, batch_size=8, lr=0.01)


def toy_problem(n=40, seed=0):
    """Two classes separated by the sign of a mean shift."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.standard_normal((n, 3, 3, 2)) * 0.3
    X += np.where(y == 1, 1.0, -1.0)[:, None, None, None]
    return X, y


def test_default_hyperparameters():
    c = TrainConfig()
    assert (c.lr, c.batch_size, c.epochs, c.beta, c.K_gwat, c.dropout, c.d) == (0.001, 64, 100, 256, 20, 0.6, 4)


@pytest.mark.parametrize("bad", [dict(lr=-1), dict(epochs=0), dict(dropout=1.0), dict(adam_beta1=1.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_sub_seeds_are_named_and_reproducible():
    assert sub_seed(0, "init") == sub_seed(0, "init")
    assert len({sub_seed(0, n) for n in ("init", "shuffle", "dropout", "data")}) == 4
    assert sub_seed(0, "init") != sub_seed(1, "init")


def test_one_hot():
    np.testing.assert_array_equal(one_hot([2, 0], 3), [[0, 0, 1], [1, 0, 0]])


def test_joint_loss_parts_and_gradient(rng):
    cfg = m.ModelConfig(P=3, Q=3, F_de=2, F_out=2, beta=4, K_gwat=2)
    p = m.init_params(cfg, 0)
    X = rng.standard_normal((4, 3, 3, 2))
    y = np.array([0, 1, 2, 3])
    tr = m.model_forward(X, p, cfg)
    total, parts = joint_loss(tr, y, 0.5)
    assert total.item() == pytest.approx(parts["ce"] + 0.5 * parts["pgl"], rel=1e-12)
    assert joint_loss(tr, y, 0.0)[0].item() == pytest.approx(parts["ce"], rel=1e-12)

    def loss():
        return joint_loss(m.model_forward(X, p, cfg, "train", np.random.default_rng(2)), y, 0.01)[0]

    assert ad.parameters_grad_check(loss, p.values()) < 1e-4


def test_adam_first_step_is_lr_times_sign():
    p = {"a": Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)}
    p["a"].grad = np.array([3.0, -0.1, 0.0])
    adam_step(p, AdamState(), lr=0.1)
    np.testing.assert_allclose(p["a"].data, [0.9, -1.9, 0.5], atol=1e-8)


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((5, 4))
    p = {"w": Tensor(np.zeros(4), requires_grad=True)}
    st_ = AdamState()
    w, mm, vv = np.zeros(4), np.zeros(4), np.zeros(4)
    for t, g in enumerate(grads, start=1):
        p["w"].grad = g.copy()
        adam_step(p, st_, lr=0.01)
        mm = 0.9 * mm + 0.1 * g
        vv = 0.999 * vv + 0.001 * g * g
        w = w - 0.01 * (mm / (1 - 0.9**t)) / (np.sqrt(vv / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"].data, w, atol=1e-14)
    assert st_.step == 5


def test_adam_minimizes_quadratic():
    p = {"x": Tensor(np.array([3.0, -4.0]), requires_grad=True)}
    st_ = AdamState()
    for _ in range(2000):
        p["x"].zero_grad()
        ad.backward((p["x"] * p["x"]).sum())
        adam_step(p, st_, lr=0.05)
    assert np.abs(p["x"].data).max() < 1e-2


def test_adam_reports_diverging_parameter():
    p = {"good": Tensor(np.ones(2), requires_grad=True), "bad": Tensor(np.ones(2), requires_grad=True)}
    p["good"].grad = np.ones(2)
    p["bad"].grad = np.array([np.nan, 1.0])
    with pytest.raises(DivergenceError, match="bad"):
        adam_step(p, AdamState(), 0.1)
    assert np.all(p["good"].data == 1.0)


def test_train_is_deterministic_and_learns_toy_problem():
    X, y = toy_problem()
    cfg = TrainConfig(epochs=6, seed=3, **TINY)
    r1 = train_model(X[:30], y[:30], X[30:], y[30:], cfg, n_classes=2)
    r2 = train_model(X[:30], y[:30], X[30:], y[30:], cfg, n_classes=2)
    assert [h["val_acc"] for h in r1.history] == [h["val_acc"] for h in r2.history]
    assert all(np.array_equal(r1.params[k].data, r2.params[k].data) for k in r1.params)
    assert set(HISTORY_COLUMNS) <= set(r1.history[0])
    assert max(h["val_acc"] for h in r1.history) == 1.0
    assert r1.model_config.n_classes == 2


def test_best_epoch_is_first_maximum():
    X, y = toy_problem()
    res = train_model(X[:30], y[:30], X[30:], y[30:], TrainConfig(epochs=8, **TINY), n_classes=2)
    accs = [h["val_acc"] for h in res.history]
    assert res.best_epoch == int(np.argmax(accs)) + 1
    probs = m.predict_proba(X[30:], res.params, res.model_config)
    assert np.mean(probs.argmax(1) == y[30:]) == accs[res.best_epoch - 1]


def test_train_rejects_empty_sets():
    X, y = toy_problem(10)
    with pytest.raises(ValueError):
        train_model(X, y, X[:0], y[:0], TrainConfig(epochs=1, **TINY))


def test_train_rejects_non_finite_inputs():
    X, y = toy_problem(16)
    X[0, 0, 0, 0] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        train_model(X, y, X, y, TrainConfig(epochs=1, **TINY), n_classes=2)


def test_train_raises_on_divergence():
    X, y = toy_problem(16)
    p = m.init_params(TrainConfig(**TINY).model_config(3, 3, 2, 2), 0)
    p["gru_fw.W_h"].data[0, 0] = np.nan
    with pytest.raises(DivergenceError, match="epoch 1"):
        train_model(X, y, X, y, TrainConfig(epochs=1, **TINY), n_classes=2, params=p)


def test_history_csv(tmp_path):
    rows = [{"epoch": 1, "train_loss": 1.5, "train_ce": 1.0, "val_loss": 1.25, "val_acc": 0.5, "pgl_term": 3.0}]
    path = tmp_path / "h.csv"
    write_history_csv(path, rows)
    with open(path) as fh:
        got = list(csv.reader(fh))
    assert got[0] == list(HISTORY_COLUMNS)
    assert [float(v) for v in got[1]] == [1, 1.5, 1.25, 0.5, 3.0]


# -- fold plans -----------------------------------------------------------


@given(st.integers(3, 40), st.integers(0, 10))
def test_loso_plan_properties(n, seed):
    plan = make_fold_plan(range(n), "loso", seed=seed)
    assert len(plan.folds) == n
    assert sorted(s for f in plan.folds for s in f.test) == list(range(n))
    for f in plan.folds:
        assert len(f.test) == 1 and len(f.val) == 1
        assert sorted(f.train + f.val + f.test) == list(range(n))


@given(st.integers(3, 62), st.data())
def test_kfold_plan_properties(n, data):
    k = data.draw(st.integers(3, n))
    plan = make_fold_plan(range(n), "kfold", n_folds=k)
    assert len(plan.folds) == k
    assert sorted(s for f in plan.folds for s in f.test) == list(range(n))
    for f in plan.folds:
        assert not set(f.train) & set(f.test)
        assert not set(f.val) & set(f.test)


def test_mass_like_plan_has_16_folds():
    plan = make_fold_plan(range(62), "kfold", n_folds=16)
    sizes = [len(f.test) for f in plan.folds]
    assert len(sizes) == 16 and sum(sizes) == 62
    assert max(sizes) - min(sizes) <= 2


def test_fold_plan_errors():
    with pytest.raises(FoldPlanError):
        make_fold_plan([0, 1], "loso")
    with pytest.raises(FoldPlanError):
        make_fold_plan(range(5), "kfold", n_folds=6)
    with pytest.raises(FoldPlanError):
        make_fold_plan(range(5), "bootstrap")
    plan = make_fold_plan(range(4), "loso")
    plan.folds[0].train.append(plan.folds[0].test[0])
    with pytest.raises(FoldPlanError, match="overlap"):
        plan.validate()
    with pytest.raises(FoldPlanError, match="more than one"):
        FoldPlan("x", [plan.folds[1], plan.folds[1]]).validate()


def test_fold_plan_is_seeded():
    a = make_fold_plan(range(10), "loso", seed=1)
    b = make_fold_plan(range(10), "loso", seed=1)
    assert a == b


def test_cross_validate_pools_every_subject():
    X, y = toy_problem(48)
    subjects = np.arange(48) % 4
    plan = make_fold_plan(range(4), "loso")
    res = cross_validate(X, y, subjects, plan, TrainConfig(epochs=2, **TINY), n_classes=2)
    assert res.pooled_cm.total == 48
    assert res.probabilities.shape == (48, 2)
    assert len(res.fold_metrics) == 4 and len(res.histories) == 4
    np.testing.assert_array_equal(np.sort(res.labels), np.sort(y))
    assert sum(fm["accuracy"] * 12 for fm in res.fold_metrics) == pytest.approx(res.pooled_metrics["accuracy"] * 48)
    # distinct per-fold seeds
    assert not np.array_equal(res.fold_params[0]["gc.Theta"].data, res.fold_params[1]["gc.Theta"].data)
    assert replace(TrainConfig(), seed=1).seed == 1
