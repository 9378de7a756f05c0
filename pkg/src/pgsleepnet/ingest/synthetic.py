"""Synthetic sequence data that is smooth on known per-class product graphs.

Each class owns a temporal factor graph (P nodes) and a spatial factor graph
(Q nodes). A sample holds ``F`` feature maps ``Y_m`` of shape ``P x Q``, each
drawn as ``unvec((L + eps I)^(-1/2) w)`` with ``w ~ N(0, I)`` and ``L`` the
Kronecker-sum Laplacian, plus white observation noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..gsp import FactorGraphPair, Graph
from .dataset import DEFAULT_BANDS, EpochFeatures
from .labels import STAGES

SMOOTHING_EPS = 0.1


def _random_graph(n: int, rng: np.random.Generator, density: float, low: float, high: float) -> np.ndarray:
    """Connected random graph: a random spanning tree plus extra random edges."""
    W = np.zeros((n, n))
    order = rng.permutation(n)
    for k in range(1, n):
        i, j = order[k], order[rng.integers(k)]
        W[i, j] = W[j, i] = rng.uniform(low, high)
    iu = np.triu_indices(n, 1)
    extra = (rng.random(iu[0].size) < density) & (W[iu] == 0)
    vals = rng.uniform(low, high, iu[0].size) * extra
    W[iu] += vals
    W.T[iu] += vals
    return W


def planted_factor_graphs(
    num_classes: int,
    P: int,
    Q: int,
    seed: int = 0,
    density: float = 0.2,
    weight_range: tuple[float, float] = (2.0, 6.0),
    normalize: bool = True,
) -> list[FactorGraphPair]:
    """Distinct connected random temporal and spatial graphs for each class.

    With ``normalize`` each factor is rescaled to ``tr(L) = n`` so that the
    classes differ in structure but not in overall edge mass; ``weight_range``
    then only sets relative edge strengths.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(num_classes):
        graphs = []
        for n in (P, Q):
            W = _random_graph(n, rng, density, *weight_range) if n > 1 else np.zeros((1, 1))
            if normalize and n > 1:
                W *= n / W.sum()  # tr(L) = sum of all entries of W
            graphs.append(Graph(W))
        pairs.append(FactorGraphPair(*graphs))
    return pairs


@dataclass
class SyntheticSpec:
    num_classes: int = 5
    Q: int = 6
    P: int = 9
    F_de: int = 9
    samples_per_class: int = 200
    sigma: float = 0.3
    seed: int = 0
    num_subjects: int = 4
    graphs: list[FactorGraphPair] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.graphs is None:
            self.graphs = planted_factor_graphs(self.num_classes, self.P, self.Q, seed=self.seed)
        if len(self.graphs) != self.num_classes:
            raise ValueError("need one factor-graph pair per class")
        for g in self.graphs:
            if g.gP.n != self.P or g.gQ.n != self.Q:
                raise ValueError("factor graph sizes disagree with P and Q")


def smoothing_operator(pair: FactorGraphPair, eps: float = SMOOTHING_EPS) -> np.ndarray:
    """``(L_N + eps I)^(-1/2)`` for the product Laplacian of ``pair``."""
    LN = pair.product_laplacian
    vals, vecs = np.linalg.eigh(LN)
    assert vals.min() > -1e-9, "product Laplacian is not PSD"
    vals = np.maximum(vals, 0.0) + eps
    return (vecs / np.sqrt(vals)) @ vecs.T


def generate_synthetic_dataset(spec: SyntheticSpec) -> EpochFeatures:
    """Sequence samples ``(N, P, Q, F)`` with class labels, grouped into subjects."""
    rng = np.random.default_rng(spec.seed)
    P, Q, F = spec.P, spec.Q, spec.F_de
    X, y = [], []
    for c, pair in enumerate(spec.graphs):
        C = smoothing_operator(pair)
        w = rng.standard_normal((spec.samples_per_class, P * Q, F))
        Y = np.einsum("ij,njf->nif", C, w)
        Y += spec.sigma * rng.standard_normal(Y.shape)
        X.append(Y.reshape(spec.samples_per_class, P, Q, F))
        y.append(np.full(spec.samples_per_class, c))
    X = np.concatenate(X)
    y = np.concatenate(y)
    order = rng.permutation(len(y))
    X, y = X[order], y[order]
    subjects = np.arange(len(y)) % max(spec.num_subjects, 1)
    names = STAGES if spec.num_classes == len(STAGES) else tuple(f"class{i}" for i in range(spec.num_classes))
    return EpochFeatures(
        X,
        y,
        band_edges=list(DEFAULT_BANDS) if F == len(DEFAULT_BANDS) else [(float(i), float(i + 1)) for i in range(F)],
        channel_names=[f"ch{i}" for i in range(Q)],
        fs=0.0,
        subjects=subjects,
        label_names=names,
    )
