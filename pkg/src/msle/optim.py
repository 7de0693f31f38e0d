"""l1-penalised solvers: sparse coding against a spectral basis, the sparse
trace embedding, the multi-view self-representation weights and the
alternating graph refinement.

Every smooth objective here is a sum of independent per-column terms, so a
single column-vectorised accelerated proximal gradient routine
(:func:`apg_solve`) serves all of them. Each column carries its own step
size, momentum and stopping state; columns never share information.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigInvalid, DivergenceDetected, ShapeMismatch
from .embedding import Embedding, laplacian_eigenmaps, _unnormalized_matrix
from .graph import GraphLaplacian, SimilarityGraph, laplacian
from .spectral import fix_signs, soft_threshold, solve_spd

log = logging.getLogger(__name__)

WEIGHTINGS = ("uniform", "eigen")


@dataclass(frozen=True)
class APGConfig:
    tol: float = 1e-6
    max_iter: int = 500
    eta: float = 2.0
    beta0: float = 1.0
    monotone: bool = True
    max_backtrack: int = 80


@dataclass(frozen=True)
class SparseCode:
    Z: np.ndarray
    alpha: float
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    beta: np.ndarray = field(repr=False, default=None)

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])

    @property
    def sparsity(self) -> float:
        return float(np.mean(np.abs(self.Z) <= 1e-12)) if self.Z.size else 1.0


def _l1_cols(Z, alpha) -> np.ndarray:
    return np.sum(alpha * np.abs(Z), axis=0)


def prox_grad_step(grad_y: np.ndarray, Y: np.ndarray, alpha, beta) -> np.ndarray:
    """``S_{alpha/beta}(Y - grad_y / beta)`` with per-column ``beta``."""
    return soft_threshold(Y - grad_y / beta, np.asarray(alpha) / beta)


def apg_solve(value, grad, z0, alpha, config: APGConfig = APGConfig()) -> SparseCode:
    """Minimise ``f(Z) + sum(alpha * |Z|)`` column by column.

    Parameters
    ----------
    value : callable
        ``value(Z)`` returns the smooth part per column (shape ``(m,)``).
    grad : callable
        Gradient of the smooth part, same shape as ``Z``.
    z0 : array
        Starting point, ``(p,)`` or ``(p, m)``.
    alpha : float or array
        l1 weight; arrays broadcast against ``Z`` (e.g. ``(p, 1)`` for
        per-row weights).

    Uses monotone FISTA with backtracking on the per-column Lipschitz
    estimate ``beta`` (multiplied by ``config.eta`` until the quadratic
    upper bound holds). A column stops once a candidate step changes its
    objective by less than ``tol`` relative.
    """
    if np.any(np.asarray(alpha) < 0):
        raise ConfigInvalid("l1 weight must be non-negative")
    vector = np.ndim(z0) == 1
    Z = np.array(z0, dtype=float, copy=True)
    if vector:
        Z = Z[:, None]
    m = Z.shape[1]
    Y = Z.copy()
    t = np.ones(m)
    beta = np.full(m, float(config.beta0))
    Fz = value(Z) + _l1_cols(Z, alpha)
    trace = [float(Fz.sum())]
    active = np.ones(m, dtype=bool)
    increases = 0
    it = 0
    for it in range(1, config.max_iter + 1):
        fy = value(Y)
        gy = grad(Y)
        P = prox_grad_step(gy, Y, alpha, beta)
        fp = value(P)
        for _ in range(config.max_backtrack):
            Dlt = P - Y
            bound = fy + np.sum(gy * Dlt, axis=0) + 0.5 * beta * np.sum(Dlt * Dlt, axis=0)
            bad = active & (fp > bound + 1e-12 * (1.0 + np.abs(fy)))
            if not bad.any():
                break
            beta = np.where(bad, beta * config.eta, beta)
            P = prox_grad_step(gy, Y, alpha, beta)
            fp = value(P)
        Fp = fp + _l1_cols(P, alpha)
        if config.monotone:
            accept = Fp <= Fz
            Znew = np.where(accept, P, Z)
            Fnew = np.where(accept, Fp, Fz)
        else:
            accept = np.ones(m, dtype=bool)
            Znew, Fnew = P, Fp
        tnew = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        Ynew = Znew + (t / tnew) * (P - Znew) + ((t - 1.0) / tnew) * (Znew - Z)
        # a candidate within tol of the current value ends the column, also
        # when rounding makes it a hair worse and the monotone rule rejects it
        small = np.abs(Fz - Fp) <= config.tol * np.maximum(np.abs(Fz), 1e-300)
        done = active & small

        Z = np.where(active, Znew, Z)
        Y = np.where(active, Ynew, Y)
        Fz = np.where(active, Fnew, Fz)
        t = np.where(active, tnew, t)
        active &= ~done
        trace.append(float(Fz.sum()))
        increases = increases + 1 if trace[-1] > trace[-2] else 0
        if increases >= 10:
            raise DivergenceDetected("objective grew for 10 consecutive steps; check the gradient")
        if not active.any():
            break
    converged = not active.any()
    Z_out = Z[:, 0] if vector else Z
    a = float(alpha) if np.ndim(alpha) == 0 else float(np.max(alpha))
    return SparseCode(Z_out, a, np.asarray(trace), it, converged, beta)


# ---------------------------------------------------------------- sparse coding

class CodingObjective:
    """Column-wise reconstruction ``(x_i - U z_i)^T M (x_i - U z_i)``.

    ``X`` is features x samples, ``U`` features x atoms. ``metric`` is the
    optional positive semidefinite ``M`` (identity when omitted).
    """

    def __init__(self, X, U, metric=None):
        self.X = np.asarray(X, dtype=float)
        self.U = np.asarray(U, dtype=float)
        if self.X.ndim != 2 or self.U.ndim != 2 or self.U.shape[0] != self.X.shape[0]:
            raise ShapeMismatch(f"basis {self.U.shape} does not match data {self.X.shape}")
        self.metric = None if metric is None else np.asarray(metric, dtype=float)
        if self.metric is not None and self.metric.shape != (self.X.shape[0],) * 2:
            raise ShapeMismatch(f"metric {self.metric.shape} does not match {self.X.shape[0]} features")

    def _check(self, Z):
        if Z.shape[0] != self.U.shape[1] or (Z.ndim == 2 and Z.shape[1] != self.X.shape[1]):
            raise ShapeMismatch(f"codes {Z.shape} do not match basis {self.U.shape} and data {self.X.shape}")

    def residual(self, Z):
        self._check(Z)
        return self.X - self.U @ Z

    def value(self, Z):
        R = self.residual(Z)
        MR = R if self.metric is None else self.metric @ R
        return np.sum(R * MR, axis=0)

    def grad(self, Z):
        R = self.residual(Z)
        MR = R if self.metric is None else self.metric @ R
        return -2.0 * (self.U.T @ MR)


def eigen_metric(U, lambdas) -> np.ndarray:
    """Metric weighting the residual component along basis column c by
    ``lambda_c / mean(lambda)``; the orthogonal complement keeps weight 1."""
    U = np.asarray(U, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    if lam.shape != (U.shape[1],):
        raise ShapeMismatch(f"{lam.shape[0]} eigenvalues for {U.shape[1]} basis columns")
    if U.shape[1] and np.max(np.abs(U.T @ U - np.eye(U.shape[1]))) > 1e-8:
        raise ConfigInvalid("eigen weighting needs an orthonormal basis")
    mean = lam.mean() if lam.size else 0.0
    w = lam / mean if mean > 0 else np.ones_like(lam)
    return np.eye(U.shape[0]) + (U * (w - 1.0)) @ U.T


def coding_objective(Z, X, U, alpha: float, lambdas=None, weighting: str = "uniform") -> float:
    """Total sparse-coding objective ``sum_i r_i^T M r_i + alpha * ||z_i||_1``."""
    if weighting not in WEIGHTINGS:
        raise ConfigInvalid(f"unknown weighting {weighting!r}")
    metric = eigen_metric(U, lambdas) if weighting == "eigen" else None
    Z = np.asarray(Z, dtype=float)
    obj = CodingObjective(X, U, metric)
    return float(obj.value(Z).sum() + alpha * np.abs(Z).sum())


def sparse_codes(X, U, alpha: float, lambdas=None, weighting: str = "uniform",
                 config: APGConfig = APGConfig(), z0=None) -> SparseCode:
    """Sparse coefficients of every column of ``X`` against basis ``U``."""
    if weighting not in WEIGHTINGS:
        raise ConfigInvalid(f"unknown weighting {weighting!r}")
    metric = eigen_metric(U, lambdas) if weighting == "eigen" else None
    obj = CodingObjective(X, U, metric)
    if z0 is None:
        z0 = np.zeros((obj.U.shape[1], obj.X.shape[1]))
    return apg_solve(obj.value, obj.grad, z0, alpha, config)


def feature_basis(X, F, rank_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal feature-space basis spanned by ``X^T F``.

    ``X`` is samples x features, ``F`` samples x r spectral coordinates.
    Directions with singular value below ``rank_tol`` times the largest are
    dropped, so the result has at most ``min(d, r)`` columns.
    """
    M = np.asarray(X, dtype=float).T @ np.asarray(F, dtype=float)
    if M.size == 0 or not np.any(M):
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    keep = s > rank_tol * s[0]
    return fix_signs(U[:, keep])


def basis_smoothness(X, U, lap_matrix, degrees=None) -> np.ndarray:
    """Rayleigh quotient of each sample-space pattern ``X u_c`` on the graph."""
    P = np.asarray(X, dtype=float) @ U
    LP = lap_matrix @ P
    num = np.sum(P * LP, axis=0)
    den = np.sum(P * P, axis=0) if degrees is None else np.sum(P * P * np.asarray(degrees)[:, None], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / den, 0.0)
    return np.maximum(out, 0.0)


# ------------------------------------------------------------ sparse embedding

class TraceObjective:
    """``y^T (A + mu q q^T) y`` per column; ``mu q q^T`` deflates the trivial direction."""

    def __init__(self, A, q=None, mu: float = 0.0):
        self.A = A
        self.q = None if q is None else np.asarray(q, dtype=float)
        self.mu = float(mu)

    def value(self, Y):
        out = np.sum(Y * (self.A @ Y), axis=0)
        if self.q is not None and self.mu:
            out = out + self.mu * (self.q @ Y) ** 2
        return out

    def grad(self, Y):
        g = 2.0 * (self.A @ Y)
        if self.q is not None and self.mu:
            g = g + 2.0 * self.mu * np.outer(self.q, self.q @ Y)
        return g


@dataclass(frozen=True)
class SparseEmbedding:
    Y: np.ndarray
    objective_trace: np.ndarray
    rounds: int
    lambda_sparse: float
    source_variant: str

    @property
    def sparsity(self) -> float:
        return float(np.mean(np.abs(self.Y) <= 1e-12))


def _lowdin(P: np.ndarray) -> np.ndarray:
    # closest orthonormal matrix with the same column span
    G = P.T @ P
    w, V = np.linalg.eigh(G)
    w = np.maximum(w, 1e-300)
    return P @ (V / np.sqrt(w)) @ V.T


def sparse_embedding(lap: GraphLaplacian, d_embed: int, lambda_sparse: float, *,
                     drop_trivial: bool = True, inner: APGConfig = APGConfig(max_iter=5),
                     max_rounds: int = 200, tol: float = 1e-8) -> SparseEmbedding:
    """Minimise ``trace(Y^T L Y) + lambda * ||Y||_1`` over D-orthonormal ``Y``.

    Works in ``Y~ = D^{1/2} Y`` where the constraint is plain orthonormality
    and the penalty becomes a per-row weighted l1. Each round runs a few
    proximal-gradient iterations from the current point and maps the result
    back to the nearest orthonormal matrix with the same span; a round is
    kept only if it lowers the objective. The symmetric variant uses the
    identity metric instead of ``D``.
    """
    if lambda_sparse < 0:
        raise ConfigInvalid("lambda_sparse must be non-negative")
    start = laplacian_eigenmaps(lap, d_embed, drop_trivial)
    d = np.asarray(lap.degrees, dtype=float).copy()
    d[d <= 0] = 1.0
    if lap.variant == "symmetric":
        metric = np.ones_like(d)
        A = lap.sym_form
    else:
        metric = d
        L = _unnormalized_matrix(lap)
        s = 1.0 / np.sqrt(metric)
        A = (sp.diags(s) @ L @ sp.diags(s)).tocsr() if sp.issparse(L) else s[:, None] * L * s[None, :]
    root = np.sqrt(metric)
    q = None
    if drop_trivial:
        q = np.sqrt(d) / np.linalg.norm(np.sqrt(d))
    obj = TraceObjective(A, q, 2.0 if drop_trivial else 0.0)
    weights = (lambda_sparse / root)[:, None]

    def total(Yt):
        return float(obj.value(Yt).sum() + np.sum(weights * np.abs(Yt)))

    Yt = root[:, None] * start.Y
    trace = [total(Yt)]
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        code = apg_solve(obj.value, obj.grad, Yt, weights, inner)
        P = np.array(code.Z, copy=True)
        used: set[int] = set()
        for c in range(P.shape[1]):
            if np.linalg.norm(P[:, c]) <= 1e-12:
                # column fully thresholded; keep its dominant entry so the span stays full rank
                order = np.argsort(-np.abs(Yt[:, c]), kind="stable")
                i = next(int(j) for j in order if int(j) not in used)
                P[:, c] = 0.0
                P[i, c] = 1.0
            used.update(np.flatnonzero(P[:, c]).tolist())
        Ynew = _lowdin(P)
        Ynew[np.abs(Ynew) <= 1e-14] = 0.0
        Fnew = total(Ynew)
        if Fnew > trace[-1]:
            rounds -= 1
            break
        change = trace[-1] - Fnew
        Yt = Ynew
        trace.append(Fnew)
        if change <= tol * max(abs(trace[-2]), 1e-300):
            break
    Y = fix_signs(Yt / root[:, None])
    return SparseEmbedding(Y, np.asarray(trace), rounds, float(lambda_sparse), lap.variant)


def sparse_embedding_objective(Y, lap: GraphLaplacian, lambda_sparse: float) -> float:
    L = _unnormalized_matrix(lap) if lap.variant != "symmetric" else lap.sym_form
    Y = np.asarray(Y, dtype=float)
    return float(np.sum(Y * (L @ Y)) + lambda_sparse * np.abs(Y).sum())


# ------------------------------------------------------ multi-view weight matrix

@dataclass(frozen=True)
class SparseWeightMatrix:
    """Self-representation weights ``W`` (samples x samples).

    Stored in factored form ``W = left @ right`` when no l1 weight is used;
    ``dense()`` materialises the matrix.
    """

    left: np.ndarray
    right: np.ndarray | None
    per_view_alphas: tuple
    residual: float
    l1_weight: float = 0.0

    @property
    def n(self) -> int:
        return self.left.shape[0]

    def dense(self) -> np.ndarray:
        return self.left if self.right is None else self.left @ self.right


class WeightObjective:
    """Per column c: ``||S^T (e_c - w_c)||^2 + w_c^T L_alpha w_c``."""

    def __init__(self, S, L_alpha):
        self.S = np.asarray(S, dtype=float)
        self.L = L_alpha
        self.G = self.S @ self.S.T

    def value(self, W):
        E = -W
        E[np.diag_indices(min(W.shape))] += 1.0
        SE = self.S.T @ E
        return np.sum(SE * SE, axis=0) + np.sum(W * (self.L @ W), axis=0)

    def grad(self, W):
        return 2.0 * (self.G @ W - self.G + self.L @ W)


def _as_matrix(L):
    if isinstance(L, GraphLaplacian):
        return _unnormalized_matrix(L)
    return L


def _weighted_sum(mats, alphas):
    total = None
    for a, L in zip(alphas, mats):
        term = a * (L.tocsr() if sp.issparse(L) else np.asarray(L, dtype=float))
        total = term if total is None else total + term
    return total


def sparse_weight_matrix(blocks, laplacians, alphas, l1_weight: float = 0.0,
                         config: APGConfig = APGConfig(tol=1e-10, max_iter=2000)) -> SparseWeightMatrix:
    """Minimise ``sum_i ||X_i - X_i W||_F^2 + sum_i alpha_i tr(W^T L_i W)``.

    ``blocks`` are the per-view sample matrices (samples x features_i); in
    the features x samples orientation of the objective they are ``X_i^T``.
    The stationary point solves ``(G + L_alpha) W = G`` with
    ``G = sum_i X_i^T X_i = S S^T``; since ``G`` has rank at most the total
    feature count the solution is kept as ``W = [(G + L_alpha)^{-1} S] S^T``.
    A positive ``l1_weight`` adds ``l1_weight * ||W||_1`` and switches to
    :func:`apg_solve`, warm-started from the quadratic solution.
    """
    blocks = [np.asarray(b, dtype=float) for b in blocks]
    if not blocks:
        raise ConfigInvalid("need at least one view")
    n = blocks[0].shape[0]
    if any(b.shape[0] != n for b in blocks):
        raise ShapeMismatch("all views must share the sample count")
    alphas = tuple(float(a) for a in alphas)
    if len(alphas) != len(blocks) or len(laplacians) != len(blocks):
        raise ConfigInvalid("need one Laplacian and one alpha per view")
    if any(a < 0 for a in alphas):
        raise ConfigInvalid("per-view alphas must be non-negative")
    S = np.hstack(blocks)
    L_alpha = _weighted_sum([_as_matrix(L) for L in laplacians], alphas)

    K = S @ S.T
    K = 0.5 * (K + K.T)
    if sp.issparse(L_alpha):
        coo = L_alpha.tocoo()
        np.add.at(K, (coo.row, coo.col), coo.data)
    else:
        K += L_alpha
    P = solve_spd(K, S)
    M = S.T @ S
    R = K @ P - S
    gnorm = float(np.linalg.norm(M))
    residual = float(np.sqrt(max(np.sum((R @ M) * R), 0.0))) / gnorm if gnorm > 0 else 0.0
    if l1_weight <= 0:
        return SparseWeightMatrix(P, S.T, alphas, residual, 0.0)

    del K
    obj = WeightObjective(S, L_alpha)
    code = apg_solve(obj.value, obj.grad, P @ S.T, l1_weight, config)
    W = code.Z
    G = S @ S.T
    KW = G @ W + (L_alpha @ W)
    residual = float(np.linalg.norm(KW - G) / np.linalg.norm(G)) if np.any(G) else 0.0
    return SparseWeightMatrix(W, None, alphas, residual, float(l1_weight))


# ------------------------------------------------------ alternating refinement

@dataclass(frozen=True)
class AlternationResult:
    code: SparseCode
    laplacian: GraphLaplacian
    graph: SimilarityGraph
    basis: np.ndarray
    embedding: Embedding
    round_objectives: np.ndarray
    rounds_run: int


def _coding_round(Xv, G, n_components, alpha, weighting, config):
    lap = laplacian(G, "symmetric")
    r = max(1, min(n_components, Xv.shape[0] - 1))
    emb = laplacian_eigenmaps(lap, r, drop_trivial=True)
    U = feature_basis(Xv, emb.Y)
    lambdas = basis_smoothness(Xv, U, lap.sym_form)
    code = sparse_codes(Xv.T, U, alpha, lambdas, weighting, config)
    return lap, emb, U, code


def reweight_graph(G: SimilarityGraph, Z: np.ndarray) -> SimilarityGraph:
    """Damp edges between samples whose codes differ.

    ``W_ij <- W_ij * exp(-||z_i - z_j||^2 / (2 s^2))`` with ``s`` the median
    code distance over existing edges, then rescaled to the original total
    weight.
    """
    W = G.weights
    codes = np.asarray(Z, dtype=float).T
    if sp.issparse(W):
        coo = sp.triu(W, k=1).tocoo()
        rows, cols, vals = coo.row, coo.col, coo.data
    else:
        rows, cols = np.nonzero(np.triu(W, k=1))
        vals = W[rows, cols]
    if vals.size == 0:
        return G
    dist2 = np.sum((codes[rows] - codes[cols]) ** 2, axis=1)
    med = float(np.median(np.sqrt(dist2)))
    if not med > 0:
        return G
    new = vals * np.exp(-dist2 / (2.0 * med * med))
    total_old, total_new = vals.sum(), new.sum()
    if total_new > 0:
        new *= total_old / total_new
    n = G.n
    upper = sp.csr_matrix((new, (rows, cols)), shape=(n, n))
    Wn = (upper + upper.T).tocsr()
    if not sp.issparse(W):
        Wn = Wn.toarray()
    return SimilarityGraph(Wn, G.sigma, G.sparsity, G.k_nn)


def alternate_refine(X_view, G: SimilarityGraph, rounds: int = 1, alpha: float = 1.0, *,
                     n_components: int = 10, weighting: str = "uniform",
                     config: APGConfig = APGConfig()) -> AlternationResult:
    """Alternate between sparse codes and the normalised graph Laplacian.

    Each round rebuilds the symmetric-normalised Laplacian from the current
    weights, recomputes the spectral feature basis and solves for the codes;
    between rounds the weights are damped by code distance
    (:func:`reweight_graph`). A round whose coding objective is higher than
    the previous one is discarded and the loop stops, so the logged
    objectives never increase.
    """
    if rounds < 1:
        raise ConfigInvalid("rounds must be at least 1")
    Xv = np.asarray(X_view, dtype=float)
    if Xv.ndim != 2 or Xv.shape[0] != G.n:
        raise ShapeMismatch(f"view data {Xv.shape} does not match a graph on {G.n} samples")
    best = (G, *_coding_round(Xv, G, n_components, alpha, weighting, config))
    objectives = [best[4].objective]
    done = 1
    for _ in range(1, rounds):
        G_next = reweight_graph(best[0], best[4].Z if best[4].Z.size else np.zeros((1, G.n)))
        cand = (G_next, *_coding_round(Xv, G_next, n_components, alpha, weighting, config))
        if cand[4].objective > objectives[-1]:
            log.info("alternation stopped: round %d raised the objective", done + 1)
            break
        best = cand
        objectives.append(cand[4].objective)
        done += 1
    G_f, lap, emb, U, code = best
    return AlternationResult(code, lap, G_f, U, emb, np.asarray(objectives), done)
