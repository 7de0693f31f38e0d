"""Multi-view sparse Laplacian eigenmaps feature selection.

Pipeline per call of :func:`run_msle`:

1. per view, a Gaussian similarity graph, its Laplacian ``L_i`` and degrees ``D_i``;
2. ``L = sum L_i`` and ``D = sum D_i``;
3. the self-representation weights ``W`` (kept for inspection and the
   ``"weight"`` score rule);
4. the smallest non-trivial solutions of ``L u = lam D u`` (the spectral basis);
5. per view, sparse codes of every sample against the feature-space image
   of that basis;
6. per-feature scores and the top-k selection.

Scores never depend on ``k``, so growing ``k`` only ever adds features.
"""
from __future__ import annotations

import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

from .data import Dataset, apply_standardizer, fit_standardizer
from .errors import ConfigInvalid, EmptyView, ShapeMismatch
from .graph import SimilarityGraph, auto_bandwidth, laplacian, similarity_graph, GraphLaplacian
from .optim import (APGConfig, SparseWeightMatrix, alternate_refine, basis_smoothness, feature_basis,
                    sparse_codes, sparse_weight_matrix)
from .spectral import eig_generalized

log = logging.getLogger(__name__)

SCORE_RULES = ("blend", "spectral", "code", "weight")
CODE_RULES = ("row_norm", "max_abs")
UCIHAR_VIEW_ORDER = ("body_acc", "gravity_acc", "body_gyro", "jerk", "magnitude", "frequency")


# -------------------------------------------------------------------- views

@dataclass(frozen=True)
class ViewSet:
    views: tuple  # of (name, index array)

    def __post_init__(self):
        views = tuple((str(name), np.asarray(cols, dtype=np.int64)) for name, cols in self.views)
        object.__setattr__(self, "views", views)
        if not views:
            raise ConfigInvalid("a view set needs at least one view")

    @property
    def m(self) -> int:
        return len(self.views)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.views]

    @property
    def disjoint(self) -> bool:
        allc = np.concatenate([c for _, c in self.views])
        return len(np.unique(allc)) == len(allc)

    def covered(self) -> np.ndarray:
        return np.unique(np.concatenate([c for _, c in self.views]))

    def validate(self, d: int, require_disjoint: bool = True) -> "ViewSet":
        for name, cols in self.views:
            if cols.size == 0:
                raise EmptyView(f"view {name!r} has no columns")
            if cols.min() < 0 or cols.max() >= d:
                raise ConfigInvalid(f"view {name!r} references columns outside 0..{d - 1}")
        if require_disjoint and not self.disjoint:
            raise ConfigInvalid("views overlap; pass require_disjoint=False to allow it")
        return self

    def to_dict(self) -> dict:
        return {name: cols.tolist() for name, cols in self.views}

    @classmethod
    def from_dict(cls, mapping: dict) -> "ViewSet":
        return cls(tuple(mapping.items()))


def contiguous_views(d: int, m: int) -> ViewSet:
    """``m`` contiguous column blocks of (nearly) equal width."""
    if not 1 <= m <= d:
        raise ConfigInvalid(f"cannot cut {d} features into {m} views")
    edges = np.linspace(0, d, m + 1).round().astype(int)
    return ViewSet(tuple((f"view{i}", np.arange(edges[i], edges[i + 1])) for i in range(m)))


def _ucihar_family(name: str) -> str | None:
    if name.startswith("angle("):
        return "gravity_acc"
    signal = re.split(r"-", name, maxsplit=1)[0]
    if signal.startswith("f"):
        return "frequency"
    if not signal.startswith("t"):
        return None
    if "Mag" in signal:
        return "magnitude"
    if "Jerk" in signal:
        return "jerk"
    if "Gyro" in signal:
        return "body_gyro"
    if "Gravity" in signal:
        return "gravity_acc"
    if "BodyAcc" in signal:
        return "body_acc"
    return None


def ucihar_views(feature_names) -> ViewSet:
    """Six disjoint views by signal family of the UCI-HAR feature names.

    Priority when a name fits several families: frequency domain, then
    magnitude, then jerk, then gyroscope / gravity / body acceleration.
    The ``angle(...)`` features join the gravity view.
    """
    groups: dict[str, list[int]] = {k: [] for k in UCIHAR_VIEW_ORDER}
    for j, name in enumerate(feature_names):
        fam = _ucihar_family(name)
        if fam is None:
            raise ConfigInvalid(f"feature {name!r} does not follow the UCI-HAR naming scheme")
        groups[fam].append(j)
    return ViewSet(tuple((k, np.array(v)) for k, v in groups.items() if v))


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class MSLEConfig:
    sigma: float | tuple | None = None
    graph_mode: str = "auto"
    k_nn: int = 15
    n_components: int = 10
    alpha: float = 1.0
    alphas: tuple | None = None
    weighting: str = "uniform"
    blend: float = 0.5
    score_rule: str = "blend"
    code_rule: str = "row_norm"
    rounds: int = 1
    l1_weight: float = 0.0
    compute_weights: bool = True
    tol: float = 1e-6
    max_iter: int = 500
    seed: int = 0
    threads: int = 1

    def validate(self, m: int) -> "MSLEConfig":
        if self.score_rule not in SCORE_RULES:
            raise ConfigInvalid(f"score_rule must be one of {SCORE_RULES}")
        if self.code_rule not in CODE_RULES:
            raise ConfigInvalid(f"code_rule must be one of {CODE_RULES}")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigInvalid("blend must lie in [0, 1]")
        if self.alpha < 0 or self.l1_weight < 0:
            raise ConfigInvalid("l1 weights must be non-negative")
        if self.alphas is not None:
            if len(self.alphas) != m:
                raise ConfigInvalid(f"{len(self.alphas)} per-view alphas for {m} views")
            if any(a < 0 for a in self.alphas):
                raise ConfigInvalid("per-view alphas must be non-negative")
        if self.n_components < 1 or self.rounds < 1:
            raise ConfigInvalid("n_components and rounds must be at least 1")
        if self.graph_mode not in ("auto", "dense", "knn"):
            raise ConfigInvalid(f"unknown graph mode {self.graph_mode!r}")
        if self.weight_in_use and not self.compute_weights:
            raise ConfigInvalid("score_rule 'weight' needs compute_weights")
        return self

    @property
    def weight_in_use(self) -> bool:
        return self.score_rule == "weight"

    def view_alphas(self, m: int) -> tuple:
        return tuple(float(a) for a in self.alphas) if self.alphas is not None else (1.0,) * m

    def view_sigma(self, i: int):
        if isinstance(self.sigma, (tuple, list)):
            return None if self.sigma[i] is None else float(self.sigma[i])
        return None if self.sigma is None else float(self.sigma)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("sigma", "alphas"):
            if isinstance(out[key], tuple):
                out[key] = list(out[key])
        return out


# ---------------------------------------------------------------- results

@dataclass(frozen=True)
class MultiViewLaplacian:
    L: np.ndarray | sp.csr_matrix
    D: np.ndarray
    per_view: tuple  # GraphLaplacian per view
    graphs: tuple  # SimilarityGraph per view
    sigmas: tuple


@dataclass(frozen=True)
class SelectionResult:
    scores: np.ndarray
    selected: np.ndarray
    k: int
    metadata: dict
    spectral_basis: np.ndarray
    eigenvalues: np.ndarray
    component_scores: dict = field(default_factory=dict)
    weights: SparseWeightMatrix | None = None
    timings: dict = field(default_factory=dict, compare=False)

    @property
    def d(self) -> int:
        return len(self.scores)

    def top(self, k: int) -> np.ndarray:
        return select_top_k(self.scores, k)


# ------------------------------------------------------------- operations

def _view_block(X: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(X[:, cols])


def _build_view(X, cols, sigma, config: MSLEConfig, view_index: int):
    Xv = _view_block(X, cols)
    if sigma is None:
        sigma = auto_bandwidth(Xv, seed=config.seed + view_index)
    G = similarity_graph(Xv, sigma, mode=config.graph_mode, k_nn=config.k_nn, seed=config.seed)
    if config.rounds > 1:
        G = alternate_refine(Xv, G, config.rounds, config.alpha, n_components=config.n_components,
                             weighting=config.weighting,
                             config=APGConfig(tol=config.tol, max_iter=config.max_iter)).graph
    return G, laplacian(G, "unnormalized")


def multiview_laplacian(X, views: ViewSet, config: MSLEConfig = MSLEConfig()) -> MultiViewLaplacian:
    """Per-view graphs and Laplacians plus their sums ``L = sum L_i``, ``D = sum D_i``.

    Views are built concurrently when ``config.threads > 1``; the sums are
    always taken in view order.
    """
    X = X.X if isinstance(X, Dataset) else np.asarray(X, dtype=float)
    views.validate(X.shape[1], require_disjoint=False)
    jobs = [(cols, config.view_sigma(i), i) for i, (_, cols) in enumerate(views.views)]
    if config.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            built = list(pool.map(lambda j: _build_view(X, j[0], j[1], config, j[2]), jobs))
    else:
        built = [_build_view(X, c, s, config, i) for c, s, i in jobs]
    graphs = tuple(g for g, _ in built)
    laps = tuple(l for _, l in built)
    L = laps[0].matrix.copy()
    D = laps[0].degrees.copy()
    for lap in laps[1:]:
        L = L + lap.matrix
        D = D + lap.degrees
    if sp.issparse(L):
        L = sp.csr_matrix(L)
    return MultiViewLaplacian(L, D, laps, graphs, tuple(g.sigma for g in graphs))


def spectral_scores(X, F) -> np.ndarray:
    """``||X[:, j]^T F||_2`` for every column of ``X``."""
    return np.linalg.norm(np.asarray(X, dtype=float).T @ np.asarray(F, dtype=float), axis=1)


def score_features(codes, views: ViewSet, d: int, rule: str = "row_norm") -> np.ndarray:
    """Per-feature scores from per-view sparse reconstructions.

    ``codes`` holds one ``(U_v, Z_v)`` pair per view, with ``U_v`` of shape
    (features in view, atoms) and ``Z_v`` (atoms, samples). Feature j of
    view v scores the l2 norm (``"row_norm"``) or the largest magnitude
    (``"max_abs"``) of row j of ``U_v @ Z_v``.
    """
    if rule not in CODE_RULES:
        raise ConfigInvalid(f"unknown code rule {rule!r}")
    if len(codes) != views.m:
        raise ShapeMismatch(f"{len(codes)} code blocks for {views.m} views")
    out = np.zeros(d)
    for (U, Z), (name, cols) in zip(codes, views.views):
        U = np.asarray(U, dtype=float)
        Z = np.asarray(Z, dtype=float)
        if U.shape[0] != cols.size or U.shape[1] != Z.shape[0]:
            raise ShapeMismatch(f"view {name!r}: basis {U.shape} and codes {Z.shape} do not fit "
                                f"{cols.size} features")
        R = U @ Z
        vals = np.linalg.norm(R, axis=1) if rule == "row_norm" else (
            np.max(np.abs(R), axis=1) if R.shape[1] else np.zeros(cols.size))
        out[cols] = vals
    return out


def weight_scores(X, W: SparseWeightMatrix) -> np.ndarray:
    """``||X[:, j]^T W||_2``: how strongly feature j survives self-representation."""
    X = np.asarray(X, dtype=float)
    if W.right is None:
        return np.linalg.norm(X.T @ W.left, axis=1)
    T = X.T @ W.left
    M = W.right @ W.right.T
    return np.sqrt(np.maximum(np.sum((T @ M) * T, axis=1), 0.0))


def _unit_max(v: np.ndarray) -> np.ndarray:
    top = float(np.max(v)) if v.size else 0.0
    return v / top if top > 0 else np.zeros_like(v)


def blend_scores(components: dict, rule: str = "blend", blend: float = 0.5) -> np.ndarray:
    """Combine score components; each is first scaled to a maximum of 1."""
    if rule == "blend":
        return (1.0 - blend) * _unit_max(components["spectral"]) + blend * _unit_max(components["code"])
    if rule not in components:
        raise ConfigInvalid(f"score component {rule!r} not available")
    return _unit_max(components[rule])


def select_top_k(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores in ascending index order; ties go
    to the lower index."""
    scores = np.asarray(scores, dtype=float)
    if not 0 <= k <= scores.size:
        raise ConfigInvalid(f"k must lie in [0, {scores.size}], got {k}")
    order = np.argsort(-scores, kind="stable")[:k]
    return np.sort(order)


def run_msle(X, views: ViewSet, k: int, config: MSLEConfig = MSLEConfig()) -> SelectionResult:
    """Select ``k`` features with multi-view sparse Laplacian eigenmaps.

    ``X`` is a training :class:`Dataset` or samples x features array; it is
    z-scored internally with its own statistics. Labels are never used.
    """
    X = X.X if isinstance(X, Dataset) else np.asarray(X, dtype=float)
    n, d = X.shape
    if not 1 <= k <= d:
        raise ConfigInvalid(f"k must lie in [1, {d}], got {k}")
    if n < 3:
        raise ConfigInvalid("need at least three samples")
    views.validate(d, require_disjoint=False)
    config.validate(views.m)
    timings: dict[str, float] = {}

    means, stds, mask = fit_standardizer(X)
    Xz = apply_standardizer(X, means, stds, mask)

    t0 = time.perf_counter()
    mv = multiview_laplacian(Xz, views, config)
    timings["graph"] = time.perf_counter() - t0

    alphas = config.view_alphas(views.m)
    W = None
    if config.compute_weights:
        t0 = time.perf_counter()
        W = sparse_weight_matrix([_view_block(Xz, c) for _, c in views.views], mv.per_view,
                                 alphas, config.l1_weight)
        timings["weights"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    r = min(config.n_components, n - 2)
    deg = mv.D.copy()
    if np.any(deg <= 0):
        log.warning("%d samples have zero total degree; treating it as 1", int(np.sum(deg <= 0)))
        deg[deg <= 0] = 1.0
    es = eig_generalized(mv.L, deg, r + 1)
    F = es.eigenvectors[:, 1:]
    lam = es.eigenvalues[1:]
    timings["eigen"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    apg = APGConfig(tol=config.tol, max_iter=config.max_iter)
    codes, code_meta = [], []
    for name, cols in views.views:
        Xv = _view_block(Xz, cols)
        U = feature_basis(Xv, F)
        smooth = basis_smoothness(Xv, U, mv.L, deg)
        code = sparse_codes(Xv.T, U, config.alpha, smooth, config.weighting, apg)
        codes.append((U, code.Z))
        code_meta.append({"view": name, "atoms": int(U.shape[1]), "iterations": int(code.iterations),
                          "converged": bool(code.converged), "objective": code.objective,
                          "sparsity": code.sparsity})
    timings["apg"] = time.perf_counter() - t0

    covered = np.zeros(d, dtype=bool)
    covered[views.covered()] = True
    spectral = np.where(covered, spectral_scores(Xz, F), 0.0)
    components = {"spectral": spectral, "code": score_features(codes, views, d, config.code_rule)}
    if W is not None:
        components["weight"] = np.where(covered, weight_scores(Xz, W), 0.0)
    scores = blend_scores(components, config.score_rule, config.blend)
    selected = select_top_k(scores, k)

    meta = {
        "method": "msle",
        "n_samples": int(n),
        "n_features": int(d),
        "views": views.to_dict(),
        "sigmas": [float(s) for s in mv.sigmas],
        "graph_modes": [g.sparsity for g in mv.graphs],
        "alphas": list(alphas),
        "laplacian_variant": "unnormalized",
        "eigenproblem": "generalized",
        "eigen_residual": float(es.residual_bound),
        "weight_residual": None if W is None else float(W.residual),
        "codes": code_meta,
        "constant_features": np.flatnonzero(mask).tolist(),
        "config": config.to_dict(),
    }
    return SelectionResult(scores, selected, int(k), meta, F, lam, components, W, timings)
