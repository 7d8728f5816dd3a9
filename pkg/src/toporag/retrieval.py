"""Top-K topological retrieval index and retrieval strategies."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingMatrix, unit_rows
from .text_embed import EmbeddingProviderSpec, embed_texts

STRATEGIES = ("none", "random", "text", "topo")


class CosineScores:
    """Cosine similarity of embedding rows (zero rows score 0)."""

    def __init__(self, emb: EmbeddingMatrix | np.ndarray, kind: str | None = None, fingerprint: str = ""):
        rows = emb.rows if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)
        self.units = unit_rows(rows)
        self.kind = kind or (emb.kind if isinstance(emb, EmbeddingMatrix) else "text")
        self.fingerprint = fingerprint or getattr(emb, "fingerprint", "")

    def __len__(self) -> int:
        return len(self.units)

    def row(self, i: int) -> np.ndarray:
        return np.clip(self.units @ self.units[i], -1.0, 1.0)


class InverseDistanceScores:
    """``1 / (epsilon + ||P_i - P_j||)``; used for role embeddings."""

    def __init__(self, emb: EmbeddingMatrix, epsilon: float = 1e-6):
        self.rows = emb.rows
        self.epsilon = epsilon
        self.kind = emb.kind
        self.fingerprint = emb.fingerprint

    def __len__(self) -> int:
        return len(self.rows)

    def row(self, i: int) -> np.ndarray:
        return 1.0 / (self.epsilon + np.linalg.norm(self.rows - self.rows[i], axis=1))


def score_source(emb: EmbeddingMatrix, epsilon: float = 1e-6):
    """Similarity source matching an embedding's kind."""
    return InverseDistanceScores(emb, epsilon) if emb.kind == "role" else CosineScores(emb)


def rank_desc(ids: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Positions of ``ids`` ordered by descending score, ties by ascending id."""
    return np.lexsort((ids, -scores))


def top_k(ids: np.ndarray, scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Exact top-k of ``(id, score)`` by (-score, id) without a full sort."""
    if k <= 0 or not len(ids):
        return []
    if k < len(ids):
        kth = np.partition(-scores, k - 1)[k - 1]
        keep = -scores <= kth
        ids, scores = ids[keep], scores[keep]
    order = rank_desc(ids, scores)[:k]
    return [(int(ids[o]), float(scores[o])) for o in order]


@dataclass(frozen=True)
class TopKIndex:
    k: int
    kind: str
    fingerprint: str
    entries: dict[int, tuple[tuple[int, float], ...]] = field(repr=False)

    def query(self, node: int) -> list[tuple[int, float]]:
        try:
            return list(self.entries[node])
        except KeyError:
            raise KeyError(f"node {node} is not indexed") from None

    def __len__(self) -> int:
        return len(self.entries)


def build_index(source, candidate_pool: Iterable[int], K: int = 64, nodes: Iterable[int] | None = None) -> TopKIndex:
    """Precompute each node's ``K`` most similar pool members (self excluded).

    Scores are produced one node at a time, so memory stays O(N * K) apart
    from a single score row.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    pool = np.unique(np.fromiter(candidate_pool, dtype=np.int64))
    if not len(pool):
        raise ValueError("candidate pool is empty")
    nodes = range(len(source)) if nodes is None else nodes
    entries = {}
    for i in nodes:
        ids = pool[pool != i]
        scores = source.row(i)[ids]
        entries[int(i)] = tuple(top_k(ids, scores, K))
    return TopKIndex(K, source.kind, source.fingerprint, entries)


def query(index: TopKIndex, node: int) -> list[tuple[int, float]]:
    return index.query(node)


def save_index(index: TopKIndex, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"k": index.k, "kind": index.kind, "fingerprint": index.fingerprint}) + "\n")
        for node in sorted(index.entries):
            fh.write(json.dumps({"id": node, "nn": [[j, s] for j, s in index.entries[node]]}) + "\n")


def load_index(path: str | Path) -> TopKIndex:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        entries = {}
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                entries[int(obj["id"])] = tuple((int(j), float(s)) for j, s in obj["nn"])
    return TopKIndex(int(header["k"]), header["kind"], header["fingerprint"], entries)


@dataclass(frozen=True)
class RetrievalPlan:
    strategy: str = "topo"
    k: int = 3
    offset: int = 0
    seed: int = 0
    pool: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.k < 0 or self.offset < 0:
            raise ValueError("k and offset must be >= 0")

    @property
    def key(self) -> str:
        if self.strategy == "topo":
            return f"topo:k{self.k}:o{self.offset}"
        if self.strategy == "random":
            return f"random:k{self.k}:s{self.seed}"
        if self.strategy == "text":
            return f"text:k{self.k}"
        return "none"


class RetrievalError(ValueError):
    pass


def retrieve_ids(
    plan: RetrievalPlan,
    target: int,
    *,
    index: TopKIndex | None = None,
    graph=None,
    partial_text: str = "",
    text_emb: EmbeddingMatrix | np.ndarray | None = None,
    provider: EmbeddingProviderSpec | None = None,
) -> list[tuple[int, float]]:
    """Ranked ``(id, score)`` pairs selected by ``plan`` for ``target``."""
    if plan.strategy == "none" or plan.k == 0:
        return []
    if plan.strategy == "topo":
        if index is None:
            raise RetrievalError("topo strategy needs an index")
        ranked = index.query(target)
        if plan.offset + plan.k > len(ranked):
            raise RetrievalError(
                f"rank window [{plan.offset}, {plan.offset + plan.k}) exceeds index list of {len(ranked)}"
            )
        return ranked[plan.offset:plan.offset + plan.k]

    if plan.pool is not None:
        pool = np.asarray(sorted(plan.pool), dtype=np.int64)
    elif graph is not None:
        pool = np.arange(graph.node_count, dtype=np.int64)
    else:
        raise RetrievalError("no candidate pool")
    pool = pool[pool != target]

    if plan.strategy == "random":
        if len(pool) < plan.k:
            raise RetrievalError(f"pool of {len(pool)} is smaller than k={plan.k}")
        rng = np.random.default_rng([plan.seed, int(target)])
        picked = rng.choice(pool, size=plan.k, replace=False)
        return [(int(j), 0.0) for j in picked]

    # text strategy: cosine between the observed prefix and pool texts
    if not partial_text:
        raise RetrievalError("text strategy needs a non-empty observed prefix")
    if text_emb is None or provider is None:
        raise RetrievalError("text strategy needs text embeddings and a provider")
    rows = text_emb.rows if isinstance(text_emb, EmbeddingMatrix) else np.asarray(text_emb)
    q = unit_rows(embed_texts(provider, [partial_text]))[0]
    scores = unit_rows(rows[pool]) @ q
    return top_k(pool, scores, plan.k)


def retrieve(plan: RetrievalPlan, target: int, *, graph, **kwargs) -> list[str]:
    """Texts of the nodes selected by ``plan``, in rank order."""
    return [graph.texts[j] for j, _ in retrieve_ids(plan, target, graph=graph, **kwargs)]


@dataclass
class TwoStageResult:
    texts: list[str]
    employees: list[int]
    empty: bool


def two_stage_retrieve(
    graph,
    sender: int,
    receiver: int,
    partial_text: str,
    index: TopKIndex,
    k: int,
    provider: EmbeddingProviderSpec,
) -> TwoStageResult:
    """Documents of the employees most similar to the sender and the receiver, re-ranked by text.

    Stage one takes the top index entry of each endpoint; stage two pools all
    their documents and keeps the ``k`` with highest cosine to ``partial_text``.
    """
    employees: list[int] = []
    for endpoint in (sender, receiver):
        ranked = index.query(endpoint)
        if ranked and ranked[0][0] not in employees:
            employees.append(ranked[0][0])
    pooled: list[str] = []
    for emp in employees:
        pooled.extend(graph.node_documents(emp))
    if not pooled or k <= 0:
        return TwoStageResult([], employees, empty=not pooled)
    vecs = embed_texts(provider, [partial_text] + pooled)
    scores = vecs[1:] @ vecs[0]
    order = rank_desc(np.arange(len(pooled)), scores)[:k]
    return TwoStageResult([pooled[o] for o in order], employees, empty=False)
