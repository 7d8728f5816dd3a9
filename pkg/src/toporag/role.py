"""Structural role embeddings from heat-kernel spectral wavelets."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .embeddings import EmbeddingMatrix, fingerprint
from .graph import TextAttributedGraph


class EigensolverCapError(ValueError):
    """Graph too large for dense eigendecomposition."""


@dataclass(frozen=True)
class WaveConfig:
    scale: float = 1.0
    t_min: float = 0.0
    t_max: float = 100.0
    n_points: int = 50
    max_nodes: int = 5000

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.n_points < 2:
            raise ValueError("need at least 2 sample points")
        if not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")

    @property
    def sample_points(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_points)

    def fingerprint(self) -> str:
        return fingerprint({"kind": "role", **asdict(self)})


def laplacian(graph: TextAttributedGraph) -> sp.csr_matrix:
    """Combinatorial Laplacian ``D - A``."""
    adj = graph.adjacency
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return sp.csr_matrix(sp.diags(deg) - adj)


def heat_wavelets(lap, scale: float, max_nodes: int = 5000) -> np.ndarray:
    """Heat-kernel wavelet matrix ``U diag(exp(-scale * lambda)) U^T``.

    Column ``a`` is the wavelet centred at node ``a``; the matrix is
    symmetric and every column sums to one.
    """
    dense = lap.toarray() if sp.issparse(lap) else np.asarray(lap, dtype=np.float64)
    n = dense.shape[0]
    if dense.shape != (n, n):
        raise ValueError("laplacian must be square")
    if n > max_nodes:
        raise EigensolverCapError(
            f"{n} nodes exceeds the dense eigensolver cap of {max_nodes}; "
            "sample a subgraph or raise max_nodes"
        )
    if n and np.max(np.abs(dense - dense.T)) > 1e-8:
        raise ValueError("laplacian is not symmetric")
    evals, evecs = np.linalg.eigh(dense)
    psi = (evecs * np.exp(-scale * evals)) @ evecs.T
    # exact symmetry so that row and column readings coincide
    return (psi + psi.T) / 2.0


def characteristic_embedding(wavelets: np.ndarray, config: WaveConfig) -> EmbeddingMatrix:
    """Sample each node's empirical characteristic function at the config's points.

    Row ``a`` is ``[Re phi_a(t_1), Im phi_a(t_1), ..., Re phi_a(t_d), Im phi_a(t_d)]``
    with ``phi_a(t) = mean_b exp(i * t * psi[a, b])``.
    """
    psi = np.asarray(wavelets, dtype=np.float64)
    n = psi.shape[0]
    if psi.shape != (n, n):
        raise ValueError("wavelet matrix must be square")
    ts = config.sample_points
    out = np.empty((n, 2 * len(ts)))
    for k, t in enumerate(ts):
        arg = t * psi
        out[:, 2 * k] = np.cos(arg).mean(axis=1)
        out[:, 2 * k + 1] = np.sin(arg).mean(axis=1)
    return EmbeddingMatrix(out, "role", config.fingerprint())


def role_embeddings(graph: TextAttributedGraph, config: WaveConfig | None = None) -> EmbeddingMatrix:
    config = config or WaveConfig()
    psi = heat_wavelets(laplacian(graph), config.scale, config.max_nodes)
    return characteristic_embedding(psi, config)


def scale_sweep(
    graph: TextAttributedGraph,
    scales: Iterable[float] = (0.1, 0.5, 1.0, 2.0, 5.0),
    config: WaveConfig | None = None,
) -> dict[float, EmbeddingMatrix]:
    """Role embeddings at several heat-kernel scales (eigendecomposition shared)."""
    base = config or WaveConfig()
    lap = laplacian(graph).toarray()
    n = lap.shape[0]
    if n > base.max_nodes:
        raise EigensolverCapError(f"{n} nodes exceeds the dense eigensolver cap of {base.max_nodes}")
    evals, evecs = np.linalg.eigh(lap)
    out = {}
    for s in scales:
        cfg = WaveConfig(float(s), base.t_min, base.t_max, base.n_points, base.max_nodes)
        psi = (evecs * np.exp(-cfg.scale * evals)) @ evecs.T
        out[float(s)] = characteristic_embedding((psi + psi.T) / 2.0, cfg)
    return out


def role_similarity(emb: EmbeddingMatrix, i: int, j: int, epsilon: float = 1e-6) -> float:
    """Reciprocal L2 distance ``1 / (epsilon + ||P_i - P_j||)``."""
    if emb.kind != "role":
        raise ValueError(f"expected a role embedding, got {emb.kind!r}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n = len(emb)
    for node in (i, j):
        if not 0 <= node < n:
            raise IndexError(f"invalid node id {node}")
    return 1.0 / (epsilon + float(np.linalg.norm(emb.rows[i] - emb.rows[j])))
