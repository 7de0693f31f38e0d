"""Gaussian similarity graphs and their Laplacians.

Self-loops are removed (``W_ii = 0``) before degrees are computed. Graphs on
more than ``DENSE_GRAPH_MAX`` samples default to a symmetrised k-nearest
neighbour sparsification so that memory stays linear in ``n``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist

from .errors import BandwidthZero, DegenerateData, IsolatedVertex, KTooLarge, NonFinite, ConfigInvalid

log = logging.getLogger(__name__)

DENSE_GRAPH_MAX = 4000
DEFAULT_KNN = 15
VARIANTS = ("unnormalized", "symmetric", "random_walk")


@dataclass(frozen=True)
class SimilarityGraph:
    weights: np.ndarray | sp.csr_matrix
    sigma: float
    sparsity: str = "dense"
    k_nn: int | None = None

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.weights)

    def degrees(self) -> np.ndarray:
        return np.asarray(self.weights.sum(axis=1)).ravel()

    def toarray(self) -> np.ndarray:
        return self.weights.toarray() if self.is_sparse else np.asarray(self.weights)


@dataclass(frozen=True)
class GraphLaplacian:
    """A Laplacian variant with the degree vector it was built from.

    ``sym_form`` is always the symmetric matrix used for eigen work: for the
    random-walk variant it is ``D^{-1/2} L D^{-1/2}``, which shares its
    spectrum with ``D^{-1} L``.
    """

    matrix: np.ndarray | sp.csr_matrix
    degrees: np.ndarray
    variant: str
    sym_form: np.ndarray | sp.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.asarray(self.matrix)


def _check_samples(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ConfigInvalid(f"samples must be a 2-d array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFinite("sample matrix contains NaN or Inf")
    return X


def sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of A and rows of B."""
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def gaussian_similarity(X, sigma: float, *, zero_diagonal: bool = True) -> SimilarityGraph:
    """Dense heat-kernel affinities ``exp(-||x_i - x_j||^2 / (2 sigma^2))``."""
    X = _check_samples(X)
    if not sigma > 0:
        raise BandwidthZero(f"kernel bandwidth must be positive, got {sigma}")
    d2 = sq_distances(X, X)
    np.fill_diagonal(d2, 0.0)
    W = np.exp(-d2 / (2.0 * sigma * sigma))
    W = 0.5 * (W + W.T)
    if zero_diagonal:
        np.fill_diagonal(W, 0.0)
    return SimilarityGraph(W, float(sigma))


def _topk_rows(W_rows: np.ndarray, row_offset: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    # largest k off-diagonal weights per row, ties to the lower column index
    block = np.array(W_rows, copy=True)
    rows = np.arange(block.shape[0])
    block[rows, rows + row_offset] = -np.inf
    order = np.argsort(-block, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(block, order, axis=1)


def _symmetrize_max(rows, cols, vals, n) -> sp.csr_matrix:
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A = A.maximum(A.T).tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def knn_sparsify(G: SimilarityGraph, k_nn: int) -> SimilarityGraph:
    """Keep each row's ``k_nn`` largest off-diagonal weights, then take max(W, W^T)."""
    n = G.n
    if not 1 <= k_nn < n:
        raise KTooLarge(f"k_nn must lie in [1, {n - 1}], got {k_nn}")
    W = G.toarray()
    cols, vals = _topk_rows(W, 0, k_nn)
    rows = np.repeat(np.arange(n), k_nn)
    A = _symmetrize_max(rows, cols.ravel(), vals.ravel(), n)
    return SimilarityGraph(A, G.sigma, "knn", k_nn)


def knn_similarity(X, sigma: float, k_nn: int = DEFAULT_KNN, block: int = 1024) -> SimilarityGraph:
    """Same result as ``knn_sparsify(gaussian_similarity(X, sigma), k_nn)``
    without ever materialising the dense n x n kernel."""
    X = _check_samples(X)
    n = X.shape[0]
    if not sigma > 0:
        raise BandwidthZero(f"kernel bandwidth must be positive, got {sigma}")
    if not 1 <= k_nn < n:
        raise KTooLarge(f"k_nn must lie in [1, {n - 1}], got {k_nn}")
    all_cols, all_vals = [], []
    for start in range(0, n, block):
        stop = min(n, start + block)
        d2 = sq_distances(X[start:stop], X)
        Wb = np.exp(-d2 / (2.0 * sigma * sigma))
        cols, vals = _topk_rows(Wb, start, k_nn)
        all_cols.append(cols)
        all_vals.append(vals)
    rows = np.repeat(np.arange(n), k_nn)
    A = _symmetrize_max(rows, np.concatenate(all_cols).ravel(), np.concatenate(all_vals).ravel(), n)
    return SimilarityGraph(A, float(sigma), "knn", k_nn)


def auto_bandwidth(X, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance over a seeded subsample of at most
    ``max_points`` rows."""
    X = _check_samples(X)
    n = X.shape[0]
    if n < 2:
        raise DegenerateData("need at least two samples to estimate a bandwidth")
    if n > max_points:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=max_points, replace=False))
        X = X[idx]
    med = float(np.median(pdist(X)))
    if not med > 0:
        raise DegenerateData("median pairwise distance is zero; supply sigma explicitly")
    return med


def similarity_graph(X, sigma: float | None = None, *, mode: str = "auto", k_nn: int = DEFAULT_KNN,
                     dense_max: int = DENSE_GRAPH_MAX, seed: int = 0) -> SimilarityGraph:
    """Build the per-view graph with the library defaults.

    ``mode`` is ``"dense"``, ``"knn"`` or ``"auto"`` (dense up to
    ``dense_max`` samples). ``sigma=None`` uses :func:`auto_bandwidth`.
    """
    X = _check_samples(X)
    if sigma is None:
        sigma = auto_bandwidth(X, seed=seed)
    if mode == "auto":
        mode = "dense" if X.shape[0] <= dense_max else "knn"
    if mode == "dense":
        return gaussian_similarity(X, sigma)
    if mode == "knn":
        return knn_similarity(X, sigma, min(k_nn, X.shape[0] - 1))
    raise ConfigInvalid(f"unknown graph mode {mode!r}; expected dense, knn or auto")


def laplacian(G: SimilarityGraph | np.ndarray, variant: str = "unnormalized", *,
              isolated: str = "warn") -> GraphLaplacian:
    """``L = D - W`` and its symmetric / random-walk normalisations.

    Zero-degree vertices make the normalised variants undefined. With
    ``isolated="warn"`` their degree is taken as 1 (the vertex stays its own
    component); ``isolated="raise"`` raises :class:`IsolatedVertex`.
    """
    if variant not in VARIANTS:
        raise ConfigInvalid(f"unknown Laplacian variant {variant!r}; allowed: {', '.join(VARIANTS)}")
    W = G.weights if isinstance(G, SimilarityGraph) else G
    sparse = sp.issparse(W)
    if sparse:
        W = sp.csr_matrix(W, dtype=float)
        if W.nnz and W.data.min() < 0:
            raise ConfigInvalid("similarity weights must be non-negative")
    else:
        W = np.asarray(W, dtype=float)
        if np.any(W < 0):
            raise ConfigInvalid("similarity weights must be non-negative")
    d = np.asarray(W.sum(axis=1)).ravel()
    L = (sp.diags(d) - W).tocsr() if sparse else np.diag(d) - W
    if variant == "unnormalized":
        return GraphLaplacian(L, d, variant, L)

    d_inv = d.copy()
    zero = d_inv <= 0
    if np.any(zero):
        if isolated == "raise":
            raise IsolatedVertex(f"{int(zero.sum())} vertices have zero degree")
        log.warning("%d isolated vertices; treating their degree as 1", int(zero.sum()))
        d_inv[zero] = 1.0
    s = 1.0 / np.sqrt(d_inv)
    if sparse:
        S = sp.diags(s)
        sym = (S @ L @ S).tocsr()
        sym = ((sym + sym.T) * 0.5).tocsr()
    else:
        sym = s[:, None] * L * s[None, :]
        sym = 0.5 * (sym + sym.T)
    if variant == "symmetric":
        return GraphLaplacian(sym, d, variant, sym)
    rw = (sp.diags(1.0 / d_inv) @ L).tocsr() if sparse else L / d_inv[:, None]
    return GraphLaplacian(rw, d, variant, sym)
