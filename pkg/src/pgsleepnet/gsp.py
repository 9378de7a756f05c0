"""Graph signal processing primitives on dense numpy matrices.

Conventions
-----------
* Laplacian ``L = diag(W 1) - W`` of a symmetric nonnegative adjacency ``W``.
* :func:`total_variation` returns ``tr(Y^T L Y)``. The pairwise double sum
  ``sum_ij ||y_i - y_j||^2 W_ij`` equals twice that value.
* Product-graph nodes are ordered ``(p, q) -> p * Q + q``, so a ``P x Q``
  signal matrix ``Y`` is vectorized row-major (``Y.reshape(-1)``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SYM_TOL = 1e-9


class GraphValidityError(ValueError):
    pass


def validate_adjacency(W: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    """Raise unless ``W`` is a square, symmetric, nonnegative matrix."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise GraphValidityError(f"adjacency must be square, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise GraphValidityError("adjacency has non-finite entries")
    if np.any(W < 0):
        raise GraphValidityError(f"adjacency has negative entries (min {W.min():.3g})")
    asym = np.max(np.abs(W - W.T)) if W.size else 0.0
    if asym > tol:
        raise GraphValidityError(f"adjacency is not symmetric (max |W - W^T| = {asym:.3g})")
    return W


def validate_laplacian(L: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise GraphValidityError(f"Laplacian must be square, got shape {L.shape}")
    if L.size and np.max(np.abs(L - L.T)) > tol:
        raise GraphValidityError("Laplacian is not symmetric")
    off = L - np.diag(np.diag(L))
    if np.any(off > tol):
        raise GraphValidityError("Laplacian has positive off-diagonal entries")
    if L.size and np.max(np.abs(L.sum(axis=1))) > tol * max(1.0, np.abs(L).max()):
        raise GraphValidityError("Laplacian rows do not sum to zero")
    return L


def laplacian_from_adjacency(W: np.ndarray) -> np.ndarray:
    W = validate_adjacency(W)
    W = (W + W.T) / 2.0
    L = -W.copy()
    np.fill_diagonal(L, 0.0)
    # diagonal set from off-diagonal row sums so that L @ 1 == 0 exactly
    np.fill_diagonal(L, -L.sum(axis=1))
    return L


@dataclass
class Graph:
    W: np.ndarray
    L: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.W = validate_adjacency(self.W)
        self.L = laplacian_from_adjacency(self.W)

    @property
    def n(self) -> int:
        return self.W.shape[0]


@dataclass
class FactorGraphPair:
    """Temporal factor ``gP`` (P nodes) and spatial factor ``gQ`` (Q nodes)."""

    gP: Graph
    gQ: Graph

    @property
    def product_laplacian(self) -> np.ndarray:
        return kronecker_sum(self.gP.L, self.gQ.L)


def total_variation(L: np.ndarray, Y: np.ndarray) -> float:
    """``tr(Y^T L Y)`` for one signal (vector) or several (columns of ``Y``)."""
    L = np.asarray(L, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if L.shape[0] != L.shape[1] or L.shape[1] != Y.shape[0]:
        raise ValueError(f"dimension mismatch: L {L.shape}, Y {Y.shape}")
    return float(np.einsum("im,ij,jm->", Y, L, Y))


def kronecker_sum(LP: np.ndarray, LQ: np.ndarray) -> np.ndarray:
    """``LP (x) I_Q + I_P (x) LQ`` with node order ``(p, q) -> p * Q + q``."""
    LP = validate_laplacian(LP)
    LQ = validate_laplacian(LQ)
    P, Q = LP.shape[0], LQ.shape[0]
    return np.kron(LP, np.eye(Q)) + np.kron(np.eye(P), LQ)


def power_iteration_max_eig(
    L: np.ndarray, tol: float = 1e-8, max_iter: int = 1000, seed: int = 0
) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = L.shape[0]
    if n == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = L @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return 0.0
        new = float(v @ w)
        v = w / norm
        if abs(new - lam) <= tol * max(abs(new), 1.0):
            return new
        lam = new
    return lam


def normalize_laplacian(L: np.ndarray, lambda_max: float | None = None) -> np.ndarray:
    """Rescale to ``2 L / lambda_max - I`` so the spectrum lies in ``[-1, 1]``.

    An empty graph (``lambda_max < 1e-12``) maps to ``-I``.
    """
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    lam = power_iteration_max_eig(L) if lambda_max is None else lambda_max
    if lam < 1e-12:
        return -np.eye(n)
    return (2.0 / lam) * L - np.eye(n)


def chebyshev_basis(L_tilde: np.ndarray, K: int) -> list[np.ndarray]:
    """``[T_0, ..., T_{K-1}]`` evaluated at ``L_tilde`` by the three-term recursion."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    L_tilde = np.asarray(L_tilde, dtype=np.float64)
    basis = [np.eye(L_tilde.shape[0])]
    if K > 1:
        basis.append(L_tilde.copy())
    for _ in range(2, K):
        basis.append(2.0 * L_tilde @ basis[-1] - basis[-2])
    return basis


def _project_offdiag(w: np.ndarray, n: int) -> np.ndarray:
    """Euclidean projection of edge weights onto ``{w >= 0, sum(w) = n / 2}``.

    With ``L = D - W``, ``tr(L) = 2 * sum_{i<j} w_ij``, so this enforces
    ``tr(L) = n`` on the upper-triangular edge vector.
    """
    target = n / 2.0
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - target
    idx = np.arange(1, u.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(w - theta, 0.0)


@dataclass
class GraphLearningResult:
    graph: Graph
    objective: float
    converged: bool
    iterations: int


def reference_graph_learning(
    Y: np.ndarray,
    lam: float,
    max_iter: int = 20000,
    tol: float = 1e-12,
) -> GraphLearningResult:
    """Smooth-signal graph learning by projected gradient on edge weights.

    Minimizes ``tr(Y^T L Y) + lam * ||L||_F^2`` over valid Laplacians with
    ``tr(L) = n``. Intended as a small-scale oracle (``n <= 32``). When ``Y``
    carries no information (all pairwise distances equal), the uniform graph
    is returned.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[0]
    if n > 32:
        raise ValueError(f"reference_graph_learning is a desk-scale oracle (n <= 32), got n={n}")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    iu = np.triu_indices(n, 1)
    sq = np.sum((Y[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
    z = sq[iu]  # tr(Y^T L Y) = sum_{i<j} w_ij z_ij

    def laplacian(wv):
        W = np.zeros((n, n))
        W[iu] = wv
        W = W + W.T
        return np.diag(W.sum(axis=1)) - W

    def objective(wv):
        L = laplacian(wv)
        return float(wv @ z + lam * np.sum(L * L))

    m = z.size
    w = np.full(m, n / 2.0 / m)
    if np.ptp(z) < 1e-12 * max(1.0, z.max()):
        return GraphLearningResult(Graph(laplacian_to_adjacency(laplacian(w))), objective(w), True, 0)

    # ||L||_F^2 = sum_i deg_i^2 + 2 * sum_{i<j} w_ij^2; gradient via incidence
    rows, cols = iu
    lipschitz = 2.0 * lam * (2.0 * (n - 1) + 2.0) + 1e-12
    step = 1.0 / lipschitz if lam > 0 else 1.0 / max(np.abs(z).max(), 1e-12)
    best_w, best_obj = w, objective(w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        deg = np.zeros(n)
        np.add.at(deg, rows, w)
        np.add.at(deg, cols, w)
        grad = z + lam * (2.0 * (deg[rows] + deg[cols]) + 4.0 * w)
        new = _project_offdiag(w - step * grad, n)
        if np.max(np.abs(new - w)) < tol:
            w = new
            converged = True
            break
        w = new
        obj = objective(w)
        if obj < best_obj:
            best_w, best_obj = w, obj
    if objective(w) <= best_obj:
        best_w, best_obj = w, objective(w)
    if not converged:
        warnings.warn(f"reference_graph_learning did not converge in {max_iter} iterations")
    W = np.zeros((n, n))
    W[iu] = best_w
    return GraphLearningResult(Graph(W + W.T), best_obj, converged, it)


def laplacian_to_adjacency(L: np.ndarray) -> np.ndarray:
    W = -np.asarray(L, dtype=np.float64).copy()
    np.fill_diagonal(W, 0.0)
    return W


def save_adjacency_csv(path, W: np.ndarray) -> None:
    np.savetxt(path, np.asarray(W, dtype=np.float64), delimiter=",", fmt="%.17g")


def load_adjacency_csv(path) -> np.ndarray:
    W = np.loadtxt(Path(path), delimiter=",", dtype=np.float64, ndmin=2)
    return W
