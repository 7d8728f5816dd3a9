"""Diffusion-based proximity embeddings.

Each node's embedding accumulates ``sum_k alpha_k * A_hat^k @ B`` where
``A_hat`` is the row-normalized adjacency and ``B`` either the identity
(exact) or a seeded Gaussian projection of it (scalable).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .embeddings import EmbeddingMatrix, cosine, fingerprint
from .graph import TextAttributedGraph, normalized_adjacency


@dataclass(frozen=True)
class DiffusionConfig:
    K: int = 3
    alphas: tuple[float, ...] = field(default=())
    projection_dim: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        alphas = tuple(float(a) for a in self.alphas) or (1.0 / self.K,) * self.K
        if len(alphas) != self.K:
            raise ValueError(f"expected {self.K} alphas, got {len(alphas)}")
        if any(a < 0 for a in alphas) or not any(a > 0 for a in alphas):
            raise ValueError("alphas must be non-negative with at least one positive")
        if self.projection_dim < 1:
            raise ValueError("projection_dim must be >= 1")
        object.__setattr__(self, "alphas", alphas)

    def fingerprint(self) -> str:
        return fingerprint({"kind": "proximity", **asdict(self)})


def gaussian_projection(n: int, d: int, seed: int) -> np.ndarray:
    """``n x d`` matrix of i.i.d. standard normals from a seeded generator."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return np.random.default_rng(seed).standard_normal((n, d))


def diffuse(norm_adj, basis, config: DiffusionConfig) -> EmbeddingMatrix:
    """Accumulate ``alpha_k * A_hat^k @ basis`` for k = 1..K.

    Cost is O(K * nnz(A_hat) * d) time and O(N * d) memory.
    """
    norm_adj = sp.csr_matrix(norm_adj)
    n = norm_adj.shape[0]
    if norm_adj.shape != (n, n):
        raise ValueError("normalized adjacency must be square")
    h = basis.toarray() if sp.issparse(basis) else np.array(basis, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != n:
        raise ValueError(f"basis has {h.shape[0] if h.ndim else 0} rows, adjacency has {n}")
    out = np.zeros_like(h, dtype=np.float64)
    for alpha in config.alphas:
        h = norm_adj @ h
        if alpha:
            out += alpha * h
    return EmbeddingMatrix(out, "proximity", config.fingerprint())


def proximity_embeddings(
    graph: TextAttributedGraph,
    config: DiffusionConfig | None = None,
    identity_basis: bool = False,
) -> EmbeddingMatrix:
    """Proximity embeddings of ``graph``; the identity basis gives the exact N x N form."""
    config = config or DiffusionConfig()
    n = graph.node_count
    basis = np.eye(n) if identity_basis else gaussian_projection(n, config.projection_dim, config.seed)
    emb = diffuse(normalized_adjacency(graph), basis, config)
    if identity_basis:
        fp = fingerprint({"kind": "proximity", "identity": True, **asdict(config)})
        emb = EmbeddingMatrix(emb.rows, "proximity", fp)
    return emb


def proximity_similarity(emb: EmbeddingMatrix, i: int, j: int) -> float:
    """Cosine of two proximity embeddings (0 if either is the zero vector)."""
    if emb.kind != "proximity":
        raise ValueError(f"expected a proximity embedding, got {emb.kind!r}")
    n = len(emb)
    for node in (i, j):
        if not 0 <= node < n:
            raise IndexError(f"invalid node id {node}")
    return cosine(emb.rows[i], emb.rows[j])
