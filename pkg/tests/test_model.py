import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgsleepnet import autodiff as ad
from pgsleepnet import model as m
from pgsleepnet.autodiff import Tensor

TINY = m.ModelConfig(P=3, Q=3, F_de=2, F_out=2, beta=4, K_gwat=2)


def small_cfg(**kw):
    base = dict(P=4, Q=5, F_de=3, F_out=2, beta=6, K_gwat=3)
    base.update(kw)
    return m.ModelConfig(**base)


def brute_pgl(X, WP, WQ):
    P, Q, F = X.shape
    total = 0.0
    for f, r, s in itertools.product(range(F), range(P), range(P)):
        total += WP[r, s] * np.sum((X[r, :, f] - X[s, :, f]) ** 2)
    for f, r, s in itertools.product(range(F), range(Q), range(Q)):
        total += WQ[r, s] * np.sum((X[:, r, f] - X[:, s, f]) ** 2)
    return 0.5 * total


def np_gru(X, Wx, Wh, bx, bh, reverse=False):
    T = X.shape[0]
    H = Wh.shape[0]
    h = np.zeros(H)
    out = np.zeros((T, H))
    sig = lambda v: 1 / (1 + np.exp(-v))
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        gx = X[t] @ Wx + bx
        gh = h @ Wh + bh
        r = sig(gx[:H] + gh[:H])
        z = sig(gx[H : 2 * H] + gh[H : 2 * H])
        n = np.tanh(gx[2 * H :] + r * gh[2 * H :])
        h = (1 - z) * n + z * h
        out[t] = h
    return out


def test_config_rejects_odd_beta():
    with pytest.raises(ValueError):
        m.ModelConfig(beta=5)


def test_init_params_shapes_and_nonnegative_scores():
    cfg = small_cfg()
    p = m.init_params(cfg, 0)
    assert p["gc.Theta"].shape == (3, 3, 2)
    assert p["gru_fw.W_x"].shape == (5 * 2, 9)
    assert p["gwat.W"].shape == (3, 6, 5)
    assert p["gwat.gamma"].shape == (3, 10, 1)
    assert np.all(p["graph.w_P"].data >= 0) and np.all(p["graph.w_Q"].data >= 0)
    q = m.init_params(cfg, 0)
    assert all(np.array_equal(p[k].data, q[k].data) for k in p)


def test_forward_shapes_and_row_stochastic(rng):
    cfg = small_cfg()
    p = m.init_params(cfg, 1)
    tr = m.model_forward(rng.standard_normal((7, 4, 5, 3)), p, cfg)
    assert tr.X1.shape == (7, 4, 5, 2)
    assert tr.X3.shape == (7, 4, 6)
    assert tr.alpha.shape == (7, 3, 4, 4)
    assert tr.X_o.shape == (7, 5)
    for M in (tr.P_attn, tr.W_P, tr.W_Q, tr.alpha, tr.X_o):
        np.testing.assert_allclose(M.data.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(M.data >= 0)


def test_single_sample_is_promoted(rng):
    p = m.init_params(TINY, 0)
    x = rng.standard_normal((3, 3, 2))
    a = m.model_forward(x, p, TINY).X_o.data
    b = m.model_forward(x[None], p, TINY).X_o.data
    np.testing.assert_array_equal(a, b)


def test_shape_mismatch_is_reported(rng):
    p = m.init_params(TINY, 0)
    with pytest.raises(ad.ShapeError, match="does not match"):
        m.model_forward(rng.standard_normal((2, 3, 4, 2)), p, TINY)
    with pytest.raises(ad.ShapeError):
        m.model_forward(rng.standard_normal((3, 3)), p, TINY)


def test_train_mode_needs_rng(rng):
    p = m.init_params(TINY, 0)
    x = rng.standard_normal((2, 3, 3, 2))
    with pytest.raises(ValueError, match="rng"):
        m.model_forward(x, p, TINY, mode="train")
    with pytest.raises(ValueError):
        m.model_forward(x, p, TINY, mode="test")


def test_eval_is_deterministic_and_train_uses_dropout(rng):
    p = m.init_params(TINY, 0)
    x = rng.standard_normal((2, 3, 3, 2))
    e1 = m.model_forward(x, p, TINY).X_o.data
    e2 = m.model_forward(x, p, TINY).X_o.data
    np.testing.assert_array_equal(e1, e2)
    t1 = m.model_forward(x, p, TINY, "train", np.random.default_rng(0)).X_o.data
    t2 = m.model_forward(x, p, TINY, "train", np.random.default_rng(0)).X_o.data
    np.testing.assert_array_equal(t1, t2)
    assert not np.allclose(t1, e1)


def test_adjacency_uses_absolute_differences():
    # epochs 0 and 1 identical, epoch 2 far away
    X = np.zeros((3, 2, 1))
    X[2] = 5.0
    w = Tensor(np.array([[1.0]]))
    W = m.learn_temporal_adjacency(X, w).data[0]
    # logits: d(0,2) = 5 -> weight e^5 against e^0 for the rest of the row
    expected = np.array([1.0, 1.0, np.exp(5.0)]) / (2 + np.exp(5.0))
    np.testing.assert_allclose(W[0], expected, atol=1e-12)
    np.testing.assert_allclose(W[2], np.array([np.exp(5.0), np.exp(5.0), 1.0]) / (2 * np.exp(5.0) + 1), atol=1e-12)


def test_negative_score_vector_gives_uniform_graph(rng):
    X = rng.standard_normal((2, 4, 3, 2))
    W = m.learn_spatial_adjacency(X, Tensor(-np.ones((2, 1)))).data
    np.testing.assert_allclose(W, 1 / 3, atol=1e-12)


def test_symmetrize_for_laplacian(rng):
    W = rng.random((2, 4, 4))
    Ws, L = m.symmetrize_for_laplacian(W)
    np.testing.assert_allclose(Ws.data, np.swapaxes(Ws.data, 1, 2))
    assert np.all(np.diagonal(Ws.data, axis1=1, axis2=2) == 0)
    np.testing.assert_allclose(L.data.sum(axis=-1), 0, atol=1e-12)


def test_pgl_loss_matches_quadruple_loop(rng):
    X = rng.standard_normal((3, 4, 5, 2))
    WP = rng.random((3, 4, 4))
    WQ = rng.random((3, 5, 5))
    got = m.pgl_loss(X, Tensor(WP), Tensor(WQ)).item()
    want = np.mean([brute_pgl(X[b], WP[b], WQ[b]) for b in range(3)])
    assert abs(got - want) < 1e-10 * max(1.0, abs(want))


def test_rescaled_laplacian_spectrum(rng):
    W = rng.random((2, 5, 5))
    _, L = m.symmetrize_for_laplacian(W)
    vals = np.linalg.eigvalsh(m.rescaled_laplacian(L).data)
    assert vals.min() >= -1 - 1e-10 and vals.max() <= 1 + 1e-10
    np.testing.assert_allclose(vals[:, -1], 1.0, atol=1e-10)


def test_rescaled_laplacian_empty_graph_is_minus_identity():
    out = m.rescaled_laplacian(Tensor(np.zeros((1, 4, 4)))).data
    np.testing.assert_array_equal(out[0], -np.eye(4))


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=6), st.integers(1, 6))
def test_chebyshev_terms_match_cosine_form(xs, K):
    x = np.array(xs)
    terms = m.chebyshev_terms(Tensor(np.diag(x)[None]), K)
    for k, T in enumerate(terms):
        np.testing.assert_allclose(np.diag(T.data[0]), np.cos(k * np.arccos(x)), atol=1e-9)


def test_graph_convolution_k1_with_flat_attention(rng):
    X = rng.standard_normal((2, 3, 4, 2))
    Theta = rng.standard_normal((1, 2, 5))
    L = m.symmetrize_for_laplacian(rng.random((2, 4, 4)))[1]
    out = m.attentive_graph_convolution(X, L, Tensor(np.ones((2, 4, 4))), Tensor(Theta)).data
    np.testing.assert_allclose(out, X @ Theta[0], atol=1e-12)


def test_graph_convolution_matches_dense_formula(rng):
    B, P, Q, F, Fo, K = 2, 3, 4, 2, 3, 3
    X = rng.standard_normal((B, P, Q, F))
    Theta = rng.standard_normal((K, F, Fo))
    Patt = rng.random((B, Q, Q))
    _, L = m.symmetrize_for_laplacian(rng.random((B, Q, Q)))
    got = m.attentive_graph_convolution(X, L, Tensor(Patt), Tensor(Theta)).data
    for b in range(B):
        Lb = L.data[b]
        Lt = 2 * Lb / np.linalg.eigvalsh(Lb).max() - np.eye(Q)
        T = [np.eye(Q), Lt, 2 * Lt @ Lt - np.eye(Q)]
        for i in range(P):
            want = sum((T[k] * Patt[b]) @ X[b, i] @ Theta[k] for k in range(K))
            np.testing.assert_allclose(got[b, i], want, atol=1e-10)


def test_gru_matches_reference(rng):
    cfg = small_cfg()
    p = m.init_params(cfg, 3)
    for k in ("gru_fw.b_x", "gru_fw.b_h", "gru_bw.b_x", "gru_bw.b_h"):
        p[k].data[:] = rng.standard_normal(p[k].shape)
    X = rng.standard_normal((2, 4, 10))
    out = m.bigru_forward(Tensor(X), p).data
    assert out.shape == (2, 4, 6)
    arr = {k: v.data for k, v in p.items()}
    for b in range(2):
        fw = np_gru(X[b], arr["gru_fw.W_x"], arr["gru_fw.W_h"], arr["gru_fw.b_x"], arr["gru_fw.b_h"])
        bw = np_gru(X[b], arr["gru_bw.W_x"], arr["gru_bw.W_h"], arr["gru_bw.b_x"], arr["gru_bw.b_h"], reverse=True)
        np.testing.assert_allclose(out[b], np.concatenate([fw, bw], axis=1), atol=1e-12)


def test_gwat_mask_zero_means_zero_attention(rng):
    X3 = Tensor(rng.standard_normal((2, 4, 6)))
    W = Tensor(rng.standard_normal((3, 6, 5)))
    gamma = Tensor(rng.standard_normal((3, 10, 1)))
    WP = rng.random((2, 4, 4))
    WP[WP < 0.4] = 0.0
    WP[:, np.arange(4), np.arange(4)] = 1.0
    alpha = m.gwat_attention(X3, Tensor(WP), W, gamma).data
    zero = np.broadcast_to((WP == 0)[:, None], alpha.shape)
    assert np.all(alpha[zero] == 0.0)
    np.testing.assert_allclose(alpha.sum(-1), 1.0, atol=1e-12)


def test_gwat_attention_reference(rng):
    X3 = rng.standard_normal((1, 3, 4))
    W = rng.standard_normal((2, 4, 5))
    gamma = rng.standard_normal((2, 10, 1))
    WP = rng.random((3, 3))
    alpha = m.gwat_attention(Tensor(X3), Tensor(WP), Tensor(W), Tensor(gamma)).data[0]
    for k in range(2):
        H = X3[0] @ W[k]
        e = np.array([[gamma[k, :, 0] @ np.concatenate([H[r], H[s]]) for s in range(3)] for r in range(3)])
        e = np.where(e > 0, e, 0.2 * e)
        num = WP * np.exp(e)
        np.testing.assert_allclose(alpha[k], num / num.sum(1, keepdims=True), atol=1e-12)


def test_gwat_rejects_empty_row(rng):
    WP = np.ones((3, 3))
    WP[1] = 0
    with pytest.raises(ValueError, match="all-zero row"):
        m.gwat_attention(Tensor(rng.standard_normal((1, 3, 4))), Tensor(WP),
                         Tensor(rng.standard_normal((2, 4, 5))), Tensor(rng.standard_normal((2, 10, 1))))


def test_gwat_output_is_mean_over_heads_and_nodes(rng):
    X3 = Tensor(rng.standard_normal((2, 3, 4)))
    W = Tensor(rng.standard_normal((2, 4, 5)))
    alpha = Tensor(np.full((2, 2, 3, 3), 1 / 3))
    X4, Xo = m.gwat_output(X3, alpha, W)
    logits = X4.data.mean(axis=(1, 2))
    want = np.exp(logits) / np.exp(logits).sum(-1, keepdims=True)
    np.testing.assert_allclose(Xo.data, want, atol=1e-12)


def test_full_model_gradient_check(rng):
    p = m.init_params(TINY, 0)
    X = rng.standard_normal((3, 3, 3, 2))
    y = np.eye(5)[[0, 2, 4]]

    def loss():
        tr = m.model_forward(X, p, TINY, "train", np.random.default_rng(5))
        return ad.cross_entropy_loss(tr.X_o, y) + m.pgl_loss(tr.X0, tr.W_P, tr.W_Q) * 0.01

    assert ad.parameters_grad_check(loss, p.values()) < 1e-4


def test_predict_proba_and_learned_graphs_agree_with_forward(rng):
    cfg = small_cfg()
    p = m.init_params(cfg, 2)
    X = rng.standard_normal((5, 4, 5, 3))
    tr = m.model_forward(X, p, cfg)
    np.testing.assert_allclose(m.predict_proba(X, p, cfg, batch_size=2), tr.X_o.data, atol=1e-12)
    WP, WQ = m.learned_graphs(X, p, cfg, batch_size=3)
    np.testing.assert_allclose(WP, tr.W_P.data, atol=1e-12)
    np.testing.assert_allclose(WQ, tr.W_Q.data, atol=1e-12)
    assert m.predict_proba(np.zeros((0, 4, 5, 3)), p, cfg).shape == (0, 5)


def test_every_parameter_gets_gradient(rng):
    cfg = small_cfg()
    p = m.init_params(cfg, 0)
    X = rng.standard_normal((6, 4, 5, 3))
    tr = m.model_forward(X, p, cfg, "train", np.random.default_rng(0))
    loss = ad.cross_entropy_loss(tr.X_o, np.eye(5)[rng.integers(0, 5, 6)]) + m.pgl_loss(tr.X0, tr.W_P, tr.W_Q) * 0.001
    ad.backward(loss)
    dead = [k for k, v in p.items() if v.grad is None or not np.any(v.grad)]
    assert dead == []


@given(st.integers(0, 10_000))
def test_pgl_loss_nonnegative_and_zero_on_constant(seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((2, 3, 4, 2))
    WP, WQ = Tensor(r.random((2, 3, 3))), Tensor(r.random((2, 4, 4)))
    assert m.pgl_loss(X, WP, WQ).item() >= 0
    const = np.broadcast_to(r.standard_normal(2), (2, 3, 4, 2)).copy()
    assert m.pgl_loss(const, WP, WQ).item() == 0.0
