"""Laplacian Eigenmaps and spectral-embedding coordinates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigInvalid, EmbedDimTooLarge, ZeroEigenvalue
from .graph import GraphLaplacian
from .spectral import eig_generalized, eig_sym

PROBLEMS = ("generalized", "standard")


@dataclass(frozen=True)
class Embedding:
    """Per-sample coordinates (rows of ``Y``) and their eigenvalues.

    ``problem`` records which eigenproblem produced the columns:
    ``"generalized"`` means ``L v = lam D v`` with D-orthonormal columns,
    ``"standard"`` means ``M v = lam v`` for the stored Laplacian variant.
    """

    Y: np.ndarray
    eigenvalues: np.ndarray
    source_variant: str
    dropped_trivial: bool
    problem: str
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def d_embed(self) -> int:
        return self.Y.shape[1]


def _unnormalized_matrix(lap: GraphLaplacian):
    """Recover ``D - W`` from any stored variant."""
    if lap.variant == "unnormalized":
        return lap.matrix
    d = lap.degrees.copy()
    d[d <= 0] = 1.0
    s = np.sqrt(d)
    if sp.issparse(lap.sym_form):
        S = sp.diags(s)
        return (S @ lap.sym_form @ S).tocsr()
    return s[:, None] * lap.sym_form * s[None, :]


def resolve_problem(lap: GraphLaplacian, problem: str) -> str:
    if problem not in PROBLEMS:
        raise ConfigInvalid(f"unknown eigenproblem {problem!r}; allowed: {', '.join(PROBLEMS)}")
    if lap.variant == "symmetric":
        return "standard"
    if lap.variant == "random_walk":
        return "generalized"
    return problem


def laplacian_eigenmaps(lap: GraphLaplacian, d_embed: int, drop_trivial: bool = True,
                        problem: str = "generalized") -> Embedding:
    """Smallest-eigenvalue embedding of a graph Laplacian.

    For the unnormalised and random-walk variants the default solves the
    generalised problem ``L v = lam D v``. ``problem="standard"`` uses the
    eigenvectors of the unnormalised ``L`` itself. The symmetric variant
    always uses the eigenvectors of ``D^{-1/2} L D^{-1/2}``.

    With ``drop_trivial`` the first eigenvector (constant on a connected
    graph) is discarded and the next ``d_embed`` are returned.
    """
    if d_embed < 1:
        raise ConfigInvalid("d_embed must be at least 1")
    n = lap.n
    need = d_embed + (1 if drop_trivial else 0)
    if need > n:
        raise EmbedDimTooLarge(f"requested {need} eigenvectors from a graph on {n} vertices")
    problem = resolve_problem(lap, problem)
    if problem == "generalized":
        d = lap.degrees.copy()
        d[d <= 0] = 1.0
        es = eig_generalized(_unnormalized_matrix(lap), d, need)
    elif lap.variant == "symmetric":
        es = eig_sym(lap.sym_form, need, "smallest")
    else:
        es = eig_sym(lap.matrix, need, "smallest")
    start = 1 if drop_trivial else 0
    lam = np.maximum(es.eigenvalues[start:], 0.0)
    return Embedding(es.eigenvectors[:, start:], lam, lap.variant, drop_trivial, problem,
                     np.asarray(lap.degrees, dtype=float))


def embed_out_of_sample(emb: Embedding, w_row) -> np.ndarray:
    """Nyström extension of an embedding to a new sample.

    ``w_row`` holds the new sample's similarities to the training samples.
    For the generalised problem each coordinate is the degree-normalised
    weighted average of the training coordinates divided by the matching
    random-walk kernel eigenvalue ``1 - lam``. The result is approximate:
    it is exact only for points whose similarity row coincides with a
    training row of the graph.
    """
    w = np.asarray(w_row, dtype=float).ravel()
    if w.shape[0] != emb.n:
        raise ConfigInvalid(f"similarity row has length {w.shape[0]}, expected {emb.n}")
    deg = float(w.sum())
    if deg == 0.0:
        return np.zeros(emb.d_embed)
    lam = emb.eigenvalues
    if emb.problem == "generalized" or emb.source_variant == "symmetric":
        kernel_eig = 1.0 - lam
        if np.any(kernel_eig <= 1e-12):
            raise ZeroEigenvalue("a used kernel eigenvalue is not positive; Nyström map undefined")
    else:
        # (W v)_i = (d_i - lam) v_i; the divisor may be negative but not zero
        kernel_eig = deg - lam
        if np.any(np.abs(kernel_eig) <= 1e-12 * max(1.0, deg)):
            raise ZeroEigenvalue("degree of the new sample equals a used eigenvalue; Nyström map undefined")
    if emb.source_variant == "symmetric":
        d = emb.degrees.copy()
        d[d <= 0] = 1.0
        return (w / np.sqrt(d)) @ emb.Y / (kernel_eig * np.sqrt(deg))
    if emb.problem == "generalized":
        return (w @ emb.Y) / (kernel_eig * deg)
    return (w @ emb.Y) / kernel_eig
