"""Forward pass of the product-graph sleep staging network.

All functions work on batches: the input ``X0`` has shape ``(B, P, Q, F)``
(a single ``(P, Q, F)`` sample is promoted to ``B = 1``). Pipeline::

    spatial attention ---------------------------.
    spatial adjacency -> Laplacian -> Chebyshev -> attentive graph conv
    -> flatten -> dropout -> BiGRU -> dropout -> graph-wise attention (masked
    by the temporal adjacency) -> class distribution
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

N_CLASSES = 5


@dataclass
class ModelConfig:
    P: int = 9
    Q: int = 26
    F_de: int = 9
    F_out: int = 10  # F' of the graph convolution
    K: int = 3  # Chebyshev terms T_0 .. T_{K-1}
    beta: int = 256  # BiGRU output width, beta/2 per direction
    K_gwat: int = 20
    n_classes: int = N_CLASSES
    dropout: float = 0.6
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.beta % 2:
            raise ValueError(f"beta must be even, got {self.beta}")
        if self.K < 1 or self.K_gwat < 1:
            raise ValueError("K and K_gwat must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, seed: int | np.random.Generator = 0) -> dict[str, Tensor]:
    """Glorot-uniform matrices, zero biases.

    The adjacency scoring vectors ``w_P``/``w_Q`` are drawn from the
    nonnegative half of the Glorot range so their ReLU starts active.
    """
    rng = np.random.default_rng(seed)
    P, Q, F, Fo, H = cfg.P, cfg.Q, cfg.F_de, cfg.F_out, cfg.beta // 2
    D = Q * Fo
    C = cfg.n_classes
    p = {
        "att.V": _glorot(rng, (Q, Q), Q, Q),
        "att.b_p": np.zeros((Q, Q)),
        "att.Z1": _glorot(rng, (P, 1), P, 1),
        "att.Z2": _glorot(rng, (F, P), F, P),
        "att.Z3": _glorot(rng, (F, 1), F, 1),
        "graph.w_P": np.abs(_glorot(rng, (F, 1), F, 1)),
        "graph.w_Q": np.abs(_glorot(rng, (F, 1), F, 1)),
        "gc.Theta": _glorot(rng, (cfg.K, F, Fo), F, Fo),
    }
    for d in ("fw", "bw"):
        p[f"gru_{d}.W_x"] = _glorot(rng, (D, 3 * H), D, 3 * H)
        p[f"gru_{d}.W_h"] = _glorot(rng, (H, 3 * H), H, 3 * H)
        p[f"gru_{d}.b_x"] = np.zeros(3 * H)
        p[f"gru_{d}.b_h"] = np.zeros(3 * H)
    p["gwat.W"] = _glorot(rng, (cfg.K_gwat, cfg.beta, C), cfg.beta, C)
    p["gwat.gamma"] = _glorot(rng, (cfg.K_gwat, 2 * C, 1), 2 * C, 1)
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def _batched(X0) -> Tensor:
    X0 = X0 if isinstance(X0, Tensor) else Tensor(X0)
    if X0.ndim == 3:
        X0 = X0.reshape((1,) + X0.shape)
    if X0.ndim != 4:
        raise ad.ShapeError(f"input must be (P, Q, F) or (B, P, Q, F), got {X0.shape}")
    return X0


def _check_shapes(X0: Tensor, params: dict[str, Tensor]) -> None:
    _, P, Q, F = X0.shape
    if params["att.V"].shape != (Q, Q) or params["att.Z1"].shape[0] != P or params["att.Z3"].shape[0] != F:
        raise ad.ShapeError(
            f"input (P={P}, Q={Q}, F={F}) does not match parameters "
            f"(V {params['att.V'].shape}, Z1 {params['att.Z1'].shape}, Z3 {params['att.Z3'].shape})"
        )


# ---------------------------------------------------------------------------
# spatial attention and adjacency learning


def spatial_attention(X0, params) -> Tensor:
    """Row-stochastic ``(B, Q, Q)`` channel attention."""
    X0 = _batched(X0)
    B, P, Q, F = X0.shape
    Z1, Z2, Z3 = params["att.Z1"], params["att.Z2"], params["att.Z3"]
    # sum_p X0[p] * Z1[p] -> (B, Q, F)
    lhs = (X0.transpose(0, 2, 3, 1) @ Z1).reshape(B, Q, F)
    # sum_f X0[..., f]^T * Z3[f] -> (B, Q, P)
    rhs = (X0 @ Z3).reshape(B, P, Q).transpose(0, 2, 1)
    inner = (lhs @ Z2) @ rhs.transpose(0, 2, 1)  # (B, Q, Q)
    gate = (inner + params["att.b_p"].expand((B, Q, Q))).sigmoid()
    return ad.softmax_axis(params["att.V"] @ gate, axis=-1)


def _pairwise_absdiff_mean(X: Tensor, node_axis: int) -> Tensor:
    """``d[b, i, j, f] = mean_k |X[b, i, k, f] - X[b, j, k, f]|`` where ``i``
    runs over ``node_axis`` (1 = epochs, 2 = channels) and ``k`` over the other."""
    if node_axis == 2:
        X = X.transpose(0, 2, 1, 3)  # nodes first
    B, N, M, F = X.shape
    xi = X.reshape(B, N, 1, M, F).expand((B, N, N, M, F))
    xj = X.reshape(B, 1, N, M, F).expand((B, N, N, M, F))
    return (xi - xj).abs().mean(axis=3)  # (B, N, N, F)


def _adjacency_from_diffs(d: Tensor, w: Tensor) -> Tensor:
    B, N, _, F = d.shape
    logits = (d @ w).reshape(B, N, N).relu()
    return ad.softmax_axis(logits, axis=-1)


def learn_temporal_adjacency(X0, w_P) -> Tensor:
    """Row-softmax ``(B, P, P)`` over ReLU scores of channel-averaged
    absolute epoch differences."""
    X0 = _batched(X0)
    return _adjacency_from_diffs(_pairwise_absdiff_mean(X0, node_axis=1), w_P)


def learn_spatial_adjacency(X0, w_Q) -> Tensor:
    """Row-softmax ``(B, Q, Q)`` over ReLU scores of epoch-averaged absolute
    channel differences."""
    X0 = _batched(X0)
    return _adjacency_from_diffs(_pairwise_absdiff_mean(X0, node_axis=2), w_Q)


def symmetrize_for_laplacian(W) -> tuple[Tensor, Tensor]:
    """Symmetric zero-diagonal adjacency ``(W + W^T) / 2`` and its Laplacian.

    Works on ``(n, n)`` or ``(B, n, n)`` tensors.
    """
    W = W if isinstance(W, Tensor) else Tensor(W)
    n = W.shape[-1]
    off = np.ones((n, n)) - np.eye(n)
    off = np.broadcast_to(off, W.shape).copy()
    Ws = (W + W.transpose()) * 0.5 * off
    deg = Ws.sum(axis=-1, keepdims=True).expand(W.shape)
    eye = np.broadcast_to(np.eye(n), W.shape).copy()
    return Ws, deg * eye - Ws


def pgl_loss(X0, W_P, W_Q) -> Tensor:
    """Product-graph smoothness cost, averaged over the batch.

    Per sample: ``0.5 * sum_m [ sum_rs ||Y_m(r,:) - Y_m(s,:)||^2 W_P(r,s)
    + sum_rs ||Y_m(:,r) - Y_m(:,s)||^2 W_Q(r,s) ]`` with ``Y_m = X0[..., m]``.
    """
    X0 = _batched(X0)
    W_P = W_P if W_P.ndim == 3 else W_P.reshape((1,) + W_P.shape)
    W_Q = W_Q if W_Q.ndim == 3 else W_Q.reshape((1,) + W_Q.shape)
    B, P, Q, F = X0.shape

    def sqdist(X, N, M):
        xi = X.reshape(B, N, 1, M * F).expand((B, N, N, M * F))
        xj = X.reshape(B, 1, N, M * F).expand((B, N, N, M * F))
        diff = xi - xj
        return (diff * diff).sum(axis=-1)

    dP = sqdist(X0, P, Q)
    dQ = sqdist(X0.transpose(0, 2, 1, 3), Q, P)
    per_sample = ((dP * W_P).sum(axis=(1, 2)) + (dQ * W_Q).sum(axis=(1, 2))) * 0.5
    return per_sample.mean()


# ---------------------------------------------------------------------------
# graph convolution


def rescaled_laplacian(L: Tensor) -> Tensor:
    """``2 L / lambda_max - I`` with differentiable ``lambda_max``; ``-I`` for
    an empty graph."""
    B, n, _ = L.shape
    lam = ad.max_eigenvalue(L)  # (B,)
    eye = np.broadcast_to(np.eye(n), L.shape).copy()
    # empty graph: L == 0, so any positive denominator yields -I
    denom = lam + Tensor((lam.data < 1e-12).astype(np.float64))
    return L * 2.0 / denom.reshape(B, 1, 1).expand(L.shape) - eye


def chebyshev_terms(L_tilde: Tensor, K: int) -> list[Tensor]:
    eye = Tensor(np.broadcast_to(np.eye(L_tilde.shape[-1]), L_tilde.shape).copy())
    terms = [eye]
    if K > 1:
        terms.append(L_tilde)
    for _ in range(2, K):
        terms.append((L_tilde @ terms[-1]) * 2.0 - terms[-2])
    return terms


def attentive_graph_convolution(X0, L_Q, P_attn, Theta) -> Tensor:
    """``X1[i] = sum_k (T_k(L~_Q) * P_attn) @ X0[i] @ Theta[k]``, shape ``(B, P, Q, F')``.

    ``Theta`` is ``(K, F, F')``; the number of Chebyshev terms is ``K``.
    """
    X0 = _batched(X0)
    B, P, Q, F = X0.shape
    K, _, Fo = Theta.shape
    if L_Q.ndim == 2:
        L_Q = L_Q.reshape(1, Q, Q).expand((B, Q, Q))
    if P_attn.ndim == 2:
        P_attn = P_attn.reshape(1, Q, Q).expand((B, Q, Q))
    terms = chebyshev_terms(rescaled_laplacian(L_Q), K)
    # channels first so the Q x Q operator acts on all epochs at once
    Xq = X0.transpose(0, 2, 1, 3).reshape(B, Q, P * F)
    out = None
    for k, T in enumerate(terms):
        mixed = ((T * P_attn) @ Xq).reshape(B, Q, P, F).transpose(0, 2, 1, 3)
        term = mixed @ Theta[k]
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# BiGRU


def gru_direction(X: Tensor, params: dict[str, Tensor], prefix: str, reverse: bool = False) -> Tensor:
    """Single-direction GRU over axis 1 of ``X`` ``(B, T, D)``; returns ``(B, T, H)``.

    ``r = s(x W_xr + b_xr + h W_hr + b_hr)``, ``z`` likewise,
    ``n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))``, ``h' = (1 - z) n + z h``.
    """
    W_x, W_h = params[f"{prefix}.W_x"], params[f"{prefix}.W_h"]
    b_x, b_h = params[f"{prefix}.b_x"], params[f"{prefix}.b_h"]
    B, T, _ = X.shape
    H = W_h.shape[0]
    gx_all = X @ W_x + b_x.expand((B, T, 3 * H))
    bh = b_h.expand((B, 3 * H))
    h = Tensor(np.zeros((B, H)))
    outs: list[Tensor] = [None] * T  # type: ignore[list-item]
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        gx = gx_all[:, t, :]
        gh = h @ W_h + bh
        r = (gx[:, :H] + gh[:, :H]).sigmoid()
        z = (gx[:, H : 2 * H] + gh[:, H : 2 * H]).sigmoid()
        n = (gx[:, 2 * H :] + r * gh[:, 2 * H :]).tanh()
        h = (1.0 - z) * n + z * h
        outs[t] = h
    return ad.stack(outs, axis=1)


def bigru_forward(X2: Tensor, params: dict[str, Tensor]) -> Tensor:
    """``(B, P, D) -> (B, P, beta)``: forward and backward states concatenated."""
    fw = gru_direction(X2, params, "gru_fw")
    bw = gru_direction(X2, params, "gru_bw", reverse=True)
    return ad.concat([fw, bw], axis=-1)


# ---------------------------------------------------------------------------
# graph-wise attention


def _head_features(X3: Tensor, W: Tensor) -> Tensor:
    """``X3 @ W[k]`` for every head: ``(B, P, beta) -> (B, K, P, C)``."""
    B, P, beta = X3.shape
    Kh, _, C = W.shape
    Wcat = W.transpose(1, 0, 2).reshape(beta, Kh * C)
    return (X3 @ Wcat).reshape(B, P, Kh, C).transpose(0, 2, 1, 3)


def gwat_attention(X3: Tensor, W_P: Tensor, W: Tensor, gamma: Tensor, slope: float = 0.2) -> Tensor:
    """Attention ``(B, K, P, P)`` per head, masked and weighted by ``W_P``.

    ``alpha[r, s] ~ W_P[r, s] * exp(LeakyReLU(gamma^T [h_r || h_s]))`` with
    ``h = X3 @ W[k]``, normalized over ``s``.
    """
    H = _head_features(X3, W)
    return _gwat_attention_from_heads(H, W_P, gamma, slope)


def _gwat_attention_from_heads(H: Tensor, W_P: Tensor, gamma: Tensor, slope: float) -> Tensor:
    B, Kh, P, C = H.shape
    if W_P.ndim == 2:
        W_P = W_P.reshape(1, P, P).expand((B, P, P))
    if np.any(W_P.data.sum(axis=-1) == 0):
        raise ValueError("temporal adjacency has an all-zero row; attention cannot be normalized")
    g_src = gamma[:, :C, :].reshape(1, Kh, 1, C).expand((B, Kh, P, C))
    g_dst = gamma[:, C:, :].reshape(1, Kh, 1, C).expand((B, Kh, P, C))
    src = (H * g_src).sum(axis=-1)  # (B, K, P)
    dst = (H * g_dst).sum(axis=-1)
    e = src.reshape(B, Kh, P, 1).expand((B, Kh, P, P)) + dst.reshape(B, Kh, 1, P).expand((B, Kh, P, P))
    mask = W_P.reshape(B, 1, P, P).expand((B, Kh, P, P))
    return ad.weighted_softmax(e.leaky_relu(slope), mask, axis=-1)


def gwat_output(X3: Tensor, alpha: Tensor, W: Tensor) -> tuple[Tensor, Tensor]:
    """Per-head node features ``alpha @ X3 @ W[k]`` and the softmax of their
    node- and head-average, ``(B, C)``."""
    H = _head_features(X3, W)
    X4 = alpha @ H  # (B, K, P, C)
    logits = X4.mean(axis=(1, 2))
    return X4, ad.softmax_axis(logits, axis=-1)


# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    X0: Tensor
    P_attn: Tensor
    W_P: Tensor
    W_Q: Tensor
    W_Q_sym: Tensor
    L_Q: Tensor
    X1: Tensor
    X2: Tensor
    X3: Tensor
    alpha: Tensor
    X4: Tensor
    X_o: Tensor
    extras: dict = field(default_factory=dict)


def model_forward(
    X0,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    """Full forward pass; ``mode='train'`` enables dropout (needs ``rng``)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and cfg.dropout > 0 and rng is None:
        raise ValueError("train mode with dropout needs an explicit rng")
    X0 = _batched(X0)
    _check_shapes(X0, params)
    B, P, Q, F = X0.shape

    P_attn = spatial_attention(X0, params)
    W_P = learn_temporal_adjacency(X0, params["graph.w_P"])
    W_Q = learn_spatial_adjacency(X0, params["graph.w_Q"])
    W_Q_sym, L_Q = symmetrize_for_laplacian(W_Q)

    X1 = attentive_graph_convolution(X0, L_Q, P_attn, params["gc.Theta"])
    X2 = X1.reshape(B, P, Q * cfg.F_out)
    X3 = bigru_forward(ad.dropout(X2, cfg.dropout, rng, train), params)
    X3 = ad.dropout(X3, cfg.dropout, rng, train)

    alpha = gwat_attention(X3, W_P, params["gwat.W"], params["gwat.gamma"], cfg.leaky_slope)
    X4, X_o = gwat_output(X3, alpha, params["gwat.W"])
    return ForwardTrace(X0, P_attn, W_P, W_Q, W_Q_sym, L_Q, X1, X2, X3, alpha, X4, X_o)


def predict_proba(X, params, cfg: ModelConfig, batch_size: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    out = [model_forward(X[i : i + batch_size], params, cfg).X_o.data for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, cfg.n_classes))


def learned_graphs(X, params, cfg: ModelConfig, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample ``W_P`` and ``W_Q`` as produced by the adjacency layers."""
    X = np.asarray(X, dtype=np.float64)
    WPs, WQs = [], []
    for i in range(0, len(X), batch_size):
        xb = Tensor(X[i : i + batch_size])
        WPs.append(learn_temporal_adjacency(xb, params["graph.w_P"]).data)
        WQs.append(learn_spatial_adjacency(xb, params["graph.w_Q"]).data)
    return np.concatenate(WPs), np.concatenate(WQs)
