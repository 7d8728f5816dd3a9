"""Correlation between textual and topological pairwise similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .embeddings import EmbeddingMatrix, unit_rows
from .proximity import DiffusionConfig, proximity_embeddings

SELECTIONS = ("all_ordered", "all_unordered_no_self", "sampled")


class UndefinedCorrelationError(ValueError):
    """Pearson correlation of a constant sequence."""


@dataclass
class PairSample:
    selection: str
    text: np.ndarray
    topo: np.ndarray
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    topo_measure: str = "cosine"

    def __post_init__(self):
        self.text = np.asarray(self.text, dtype=np.float64)
        self.topo = np.asarray(self.topo, dtype=np.float64)
        if self.text.shape != self.topo.shape or self.text.ndim != 1:
            raise ValueError("text and topo scores must be aligned 1-D sequences")
        if len(self.text) < 2:
            raise ValueError("need at least two pairs")

    def __len__(self) -> int:
        return len(self.text)


def pearson(sample: PairSample) -> float:
    """Pearson r of the aligned (text, topo) scores, two-pass."""
    x, y = sample.text, sample.topo
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def _upper_pairs(n: int, flat: np.ndarray) -> np.ndarray:
    # decode row-major positions in the strict upper triangle
    starts = np.arange(n, dtype=np.int64) * n - np.arange(n, dtype=np.int64) * (np.arange(n, dtype=np.int64) + 1) // 2
    i = np.searchsorted(starts, flat, side="right") - 1
    j = flat - starts[i] + i + 1
    return np.stack([i, j], axis=1)


def select_pairs(n: int, selection: str = "all_unordered_no_self", count: int | None = None, seed: int = 0) -> np.ndarray:
    if selection == "all_ordered":
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return np.stack([ii.ravel(), jj.ravel()], axis=1)
    total = n * (n - 1) // 2
    if selection == "all_unordered_no_self":
        return _upper_pairs(n, np.arange(total, dtype=np.int64))
    if selection == "sampled":
        if count is None:
            raise ValueError("sampled selection needs a pair count")
        if count > total:
            raise ValueError(f"cannot sample {count} pairs from {total} available")
        rng = np.random.default_rng(seed)
        flat = np.sort(rng.choice(total, size=count, replace=False))
        return _upper_pairs(n, flat.astype(np.int64))
    raise ValueError(f"unknown pair selection {selection!r}")


def score_pairs(emb: EmbeddingMatrix | np.ndarray, pairs: np.ndarray, measure: str = "cosine", chunk: int = 200_000) -> np.ndarray:
    rows = emb.rows if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)
    out = np.empty(len(pairs))
    units = unit_rows(rows) if measure == "cosine" else rows
    for s in range(0, len(pairs), chunk):
        p = pairs[s:s + chunk]
        a, b = units[p[:, 0]], units[p[:, 1]]
        if measure == "cosine":
            out[s:s + chunk] = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
        elif measure == "distance":
            out[s:s + chunk] = np.linalg.norm(a - b, axis=1)
        else:
            raise ValueError(f"unknown measure {measure!r}")
    return out


def pairwise_scores(
    graph,
    text_emb: EmbeddingMatrix | np.ndarray,
    topo_emb: EmbeddingMatrix,
    selection: str = "all_unordered_no_self",
    count: int | None = None,
    seed: int = 0,
    topo_measure: str | None = None,
) -> PairSample:
    """Aligned text cosine and topological scores over a set of node pairs.

    Role embeddings are scored by L2 distance by default (so a negative
    correlation is the expected direction); others by cosine.
    """
    n = graph.node_count
    text_rows = text_emb.rows if isinstance(text_emb, EmbeddingMatrix) else np.asarray(text_emb)
    if len(text_rows) != n or len(topo_emb) != n:
        raise ValueError("embedding row counts must match the graph")
    measure = topo_measure or ("distance" if topo_emb.kind == "role" else "cosine")
    pairs = select_pairs(n, selection, count, seed)
    return PairSample(
        selection=selection,
        text=score_pairs(text_rows, pairs, "cosine"),
        topo=score_pairs(topo_emb, pairs, measure),
        pairs=pairs,
        topo_measure=measure,
    )


@dataclass
class Bin:
    lo: float
    hi: float
    mean: float | None
    count: int
    stderr: float | None

    def to_json(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "mean": self.mean, "count": self.count, "stderr": self.stderr}


def binned_curve(sample: PairSample, bin_edges: Sequence[float]) -> list[Bin]:
    """Mean text score per topo-score bin (left-closed; the last bin is closed).

    Pairs whose topo score falls outside the edges are not counted.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing with at least 2 entries")
    idx = np.searchsorted(edges, sample.topo, side="right") - 1
    idx[sample.topo == edges[-1]] = len(edges) - 2
    bins = []
    for b in range(len(edges) - 1):
        vals = sample.text[idx == b]
        c = len(vals)
        mean = float(vals.mean()) if c else None
        stderr = float(vals.std(ddof=1) / math.sqrt(c)) if c > 1 else (0.0 if c == 1 else None)
        bins.append(Bin(float(edges[b]), float(edges[b + 1]), mean, c, stderr))
    return bins


def group_mean_matrix(
    groups: Sequence,
    scores: np.ndarray | Callable[[int, int], float],
) -> tuple[list, np.ndarray]:
    """Mean pairwise score between label groups (excluding i == j).

    Returns sorted labels and a G x G matrix; group pairs with no valid pair
    (a singleton's diagonal) are NaN.
    """
    labels = sorted(set(groups), key=lambda g: (str(type(g)), g))
    if len(labels) < 2:
        raise ValueError("need at least two groups")
    n = len(groups)
    if callable(scores):
        mat = np.array([[scores(i, j) if i != j else 0.0 for j in range(n)] for i in range(n)], dtype=np.float64)
    else:
        mat = np.asarray(scores, dtype=np.float64)
        if mat.shape != (n, n):
            raise ValueError("score matrix must be N x N")
    pos = {g: k for k, g in enumerate(labels)}
    onehot = np.zeros((n, len(labels)))
    onehot[np.arange(n), [pos[g] for g in groups]] = 1.0
    off = mat.copy()
    np.fill_diagonal(off, 0.0)
    sums = onehot.T @ off @ onehot
    sizes = onehot.sum(axis=0)
    counts = np.outer(sizes, sizes) - np.diag(sizes)
    out = np.divide(sums, counts, out=np.full_like(sums, np.nan), where=counts > 0)
    return labels, out


def layer_sweep(
    graph,
    text_emb: EmbeddingMatrix | np.ndarray,
    K_max: int,
    config: DiffusionConfig | None = None,
    selection: str = "all_unordered_no_self",
    count: int | None = None,
    seed: int = 0,
    identity_basis: bool = False,
) -> list[float]:
    """Pearson correlation for diffusion depth k = 1..K_max (uniform weights)."""
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    base = config or DiffusionConfig()
    out = []
    for k in range(1, K_max + 1):
        cfg = DiffusionConfig(K=k, projection_dim=base.projection_dim, seed=base.seed)
        topo = proximity_embeddings(graph, cfg, identity_basis=identity_basis)
        out.append(pearson(pairwise_scores(graph, text_emb, topo, selection, count, seed)))
    return out


def correlation_report(
    sample: PairSample,
    bins: list[Bin] | None = None,
    group_matrix: tuple[list, np.ndarray] | None = None,
    extra: dict | None = None,
) -> dict:
    report = {
        "pearson": pearson(sample),
        "pair_selection": sample.selection,
        "pairs": len(sample),
        "x_axis": "topo_" + sample.topo_measure,
        "y_axis": "text_cosine",
        "bins": [b.to_json() for b in bins or []],
    }
    if group_matrix is not None:
        labels, values = group_matrix
        report["group_matrix"] = {
            "labels": [str(lab) for lab in labels],
            "values": [[None if np.isnan(v) else float(v) for v in row] for row in values],
        }
    if extra:
        report.update(extra)
    return report
