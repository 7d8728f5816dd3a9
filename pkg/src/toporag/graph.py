"""Text-attributed graph storage, loading, splitting and sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Raised when a nodes/edges file does not conform to the expected format."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


@dataclass(frozen=True, eq=False)
class TextAttributedGraph:
    """Undirected graph whose nodes carry text.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``,
    sorted lexicographically. ``documents`` is the optional multi-text payload
    (e.g. all emails of an employee); ``original_ids`` maps every node back to
    the id it had in the source file.
    """

    texts: tuple[str, ...]
    edges: np.ndarray
    labels: tuple | None = None
    timestamps: np.ndarray | None = None
    documents: tuple[tuple[str, ...], ...] | None = None
    text_missing: frozenset[int] = field(default_factory=frozenset)
    original_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        n = len(self.texts)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            if edges.min() < 0 or edges.max() >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError("edges must be canonical (i < j) without self-loops")
        object.__setattr__(self, "edges", edges)
        for name in ("labels", "documents", "original_ids"):
            value = getattr(self, name)
            if value is not None and len(value) != n:
                raise ValueError(f"{name} must have {n} entries")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps, dtype=np.int64)
            if ts.shape != (n,):
                raise ValueError(f"timestamps must have {n} entries")
            object.__setattr__(self, "timestamps", ts)
        for i, text in enumerate(self.texts):
            if text == "" and i not in self.text_missing:
                raise ValueError(f"node {i} has empty text but is not flagged text-missing")

    @property
    def node_count(self) -> int:
        return len(self.texts)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        n = self.node_count
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        data = np.ones(len(rows), dtype=np.float64)
        adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
        adj.sort_indices()
        return adj

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def neighbors(self, node: int) -> np.ndarray:
        """Sorted ids adjacent to ``node``."""
        self._check_id(node)
        adj = self.adjacency
        return adj.indices[adj.indptr[node]:adj.indptr[node + 1]].copy()

    def node_documents(self, node: int) -> tuple[str, ...]:
        """Texts attached to a node: its multi-text payload, else its single text."""
        self._check_id(node)
        if self.documents is not None:
            return self.documents[node]
        return (self.texts[node],) if self.texts[node] else ()

    def _check_id(self, node: int) -> None:
        if not 0 <= int(node) < self.node_count:
            raise IndexError(f"invalid node id {node} (graph has {self.node_count} nodes)")

    def with_edges(self, edges: np.ndarray) -> TextAttributedGraph:
        return replace(self, edges=edges)

    def induced_subgraph(self, nodes: Sequence[int]) -> TextAttributedGraph:
        """Subgraph on ``nodes`` (re-indexed in ascending old-id order)."""
        keep = np.unique(np.asarray(nodes, dtype=np.int64))
        remap = np.full(self.node_count, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        e = remap[self.edges]
        e = e[(e >= 0).all(axis=1)] if len(e) else e.reshape(0, 2)
        orig = self.original_ids or tuple(range(self.node_count))
        return TextAttributedGraph(
            texts=tuple(self.texts[i] for i in keep),
            edges=e,
            labels=None if self.labels is None else tuple(self.labels[i] for i in keep),
            timestamps=None if self.timestamps is None else self.timestamps[keep],
            documents=None if self.documents is None else tuple(self.documents[i] for i in keep),
            text_missing=frozenset(int(remap[i]) for i in self.text_missing if remap[i] >= 0),
            original_ids=tuple(orig[i] for i in keep),
        )


def canonical_edges(pairs, n: int | None = None) -> np.ndarray:
    """Unordered, de-duplicated, self-loop-free edge array sorted by (i, j)."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if not len(arr):
        return arr
    arr = np.sort(arr, axis=1)
    arr = arr[arr[:, 0] != arr[:, 1]]
    if n is not None and len(arr) and (arr.min() < 0 or arr.max() >= n):
        raise ValueError("edge endpoint out of range")
    return np.unique(arr, axis=0) if len(arr) else arr


def load_graph(nodes_path: str | Path, edges_path: str | Path, min_text_words: int = 0) -> TextAttributedGraph:
    """Load a graph from a JSON-lines nodes file and a tab-separated edges file.

    Nodes whose text has fewer than ``min_text_words`` whitespace tokens are
    dropped and the remaining ids re-packed to ``0..N-1``; the mapping back to
    file ids is kept in ``original_ids``. Directed edge lists are symmetrized,
    duplicates and self-loops removed.
    """
    records = _read_nodes(nodes_path)
    raw_edges = _read_edges(edges_path, set(records))

    file_ids = sorted(records)
    kept = []
    for fid in file_ids:
        rec = records[fid]
        if rec["text_missing"] or len(rec["text"].split()) >= min_text_words:
            kept.append(fid)
    new_id = {fid: i for i, fid in enumerate(kept)}

    pairs = [(new_id[a], new_id[b]) for a, b in raw_edges if a in new_id and b in new_id]
    edges = canonical_edges(pairs, len(kept))

    labels = [records[f]["label"] for f in kept]
    stamps = [records[f]["timestamp"] for f in kept]
    docs = [records[f]["texts"] for f in kept]
    return TextAttributedGraph(
        texts=tuple(records[f]["text"] for f in kept),
        edges=edges,
        labels=tuple(labels) if any(lab is not None for lab in labels) else None,
        timestamps=np.asarray(stamps, dtype=np.int64) if stamps and all(t is not None for t in stamps) else None,
        documents=tuple(docs) if any(d is not None for d in docs) else None,
        text_missing=frozenset(new_id[f] for f in kept if records[f]["text_missing"]),
        original_ids=tuple(kept),
    )


def _read_nodes(path) -> dict[int, dict]:
    records: dict[int, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(obj, dict):
                raise GraphFormatError("record must be a JSON object", path, lineno)
            nid, text = obj.get("id"), obj.get("text")
            if not isinstance(nid, int) or isinstance(nid, bool):
                raise GraphFormatError("'id' must be an integer", path, lineno)
            if not isinstance(text, str):
                raise GraphFormatError("'text' must be a string", path, lineno)
            label, ts = obj.get("label"), obj.get("timestamp")
            if label is not None and not isinstance(label, (str, int)):
                raise GraphFormatError("'label' must be str, int or null", path, lineno)
            if ts is not None and (not isinstance(ts, int) or isinstance(ts, bool)):
                raise GraphFormatError("'timestamp' must be int or null", path, lineno)
            docs = obj.get("texts")
            if docs is not None:
                if not isinstance(docs, list) or not all(isinstance(d, str) for d in docs):
                    raise GraphFormatError("'texts' must be a list of strings", path, lineno)
                docs = tuple(docs)
            missing = bool(obj.get("text_missing", False))
            if text == "" and not missing:
                raise GraphFormatError("empty text without 'text_missing' flag", path, lineno)
            if nid in records:
                raise GraphFormatError(f"duplicate node id {nid}", path, lineno)
            records[nid] = {"text": text, "label": label, "timestamp": ts, "texts": docs, "text_missing": missing}
    return records


def _read_edges(path, known_ids: set[int]) -> list[tuple[int, int]]:
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError("expected 'src<TAB>dst'", path, lineno)
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError("edge endpoints must be decimal integers", path, lineno) from None
            for end in (a, b):
                if end not in known_ids:
                    raise GraphFormatError(f"dangling edge endpoint {end}", path, lineno)
            edges.append((a, b))
    return edges


def write_graph(graph: TextAttributedGraph, nodes_path: str | Path, edges_path: str | Path) -> None:
    """Write ``graph`` in the loader's formats, using the current (packed) ids."""
    with open(nodes_path, "w", encoding="utf-8", newline="\n") as fh:
        for i, text in enumerate(graph.texts):
            rec = {
                "id": i,
                "text": text,
                "label": None if graph.labels is None else graph.labels[i],
                "timestamp": None if graph.timestamps is None else int(graph.timestamps[i]),
            }
            if graph.documents is not None:
                rec["texts"] = list(graph.documents[i])
            if i in graph.text_missing:
                rec["text_missing"] = True
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    with open(edges_path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in graph.edges.tolist():
            fh.write(f"{a}\t{b}\n")


def write_reindex_map(graph: TextAttributedGraph, path: str | Path) -> None:
    """JSON-lines sidecar mapping original file ids to current ids."""
    orig = graph.original_ids or tuple(range(graph.node_count))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for new, old in enumerate(orig):
            fh.write(json.dumps({"old": int(old), "new": new}) + "\n")


def neighbors(graph: TextAttributedGraph, node: int) -> set[int]:
    return set(graph.neighbors(node).tolist())


def normalized_adjacency(graph: TextAttributedGraph) -> sp.csr_matrix:
    """Row-normalized adjacency D^-1 A; rows of isolated nodes stay zero."""
    adj = graph.adjacency
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    out = sp.diags(inv) @ adj
    return sp.csr_matrix(out)


# --- splits ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    """Fully/partially observed node sets plus observed prefixes.

    ``prefixes`` maps each usable partial node to ``(observed, hidden)``.
    Partial nodes with no more than ``starting_words`` tokens have nothing to
    generate; they stay in ``partial_ids`` but are listed in ``excluded``.
    """

    full_ids: tuple[int, ...]
    partial_ids: tuple[int, ...]
    starting_words: int
    prefixes: dict[int, tuple[str, str]]
    excluded: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            "full_ids": list(self.full_ids),
            "partial_ids": list(self.partial_ids),
            "starting_words": self.starting_words,
            "excluded": list(self.excluded),
            "prefixes": {str(k): list(v) for k, v in sorted(self.prefixes.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> SplitAssignment:
        return cls(
            full_ids=tuple(obj["full_ids"]),
            partial_ids=tuple(obj["partial_ids"]),
            starting_words=int(obj["starting_words"]),
            prefixes={int(k): (v[0], v[1]) for k, v in obj["prefixes"].items()},
            excluded=tuple(obj.get("excluded", ())),
        )


def split_prefix(text: str, starting_words: int) -> tuple[str, str] | None:
    """Split ``text`` after its first ``starting_words`` whitespace tokens.

    Returns ``None`` if the text has no tokens left to hide. The single
    whitespace character separating the two parts is dropped, so for
    space-separated text ``prefix + " " + suffix == text``.
    """
    if starting_words < 0:
        raise ValueError("starting_words must be >= 0")
    tokens = text.split()
    if starting_words >= len(tokens):
        return None
    if starting_words == 0:
        return "", text
    pos, seen = 0, 0
    # walk the raw string so the hidden part keeps its original bytes
    while True:
        while text[pos].isspace():
            pos += 1
        while pos < len(text) and not text[pos].isspace():
            pos += 1
        seen += 1
        if seen == starting_words:
            break
    return text[:pos], text[pos + 1:]


def _ceil_count(fraction: float, n: int) -> int:
    # ceil(fraction * n), ignoring float noise such as (1/11) * 11 = 1.0000000000000002
    return math.ceil(round(fraction * n, 9))


def split_nodes(
    graph: TextAttributedGraph,
    partial_fraction: float = 0.1,
    strategy: str = "random",
    starting_words: int = 3,
    seed: int = 0,
) -> SplitAssignment:
    """Assign ``ceil(partial_fraction * N)`` nodes to the partially observed set."""
    if not 0 < partial_fraction < 1:
        raise ValueError("partial_fraction must lie in (0, 1)")
    n = graph.node_count
    m = _ceil_count(partial_fraction, n)
    if strategy == "random":
        rng = np.random.default_rng(seed)
        partial = np.sort(rng.choice(n, size=m, replace=False))
    elif strategy == "time":
        if graph.timestamps is None:
            raise ValueError("time split requires node timestamps")
        order = np.lexsort((np.arange(n), -graph.timestamps))
        partial = np.sort(order[:m])
    else:
        raise ValueError(f"unknown split strategy {strategy!r}")

    partial_set = set(partial.tolist())
    prefixes, excluded = {}, []
    for i in partial.tolist():
        parts = split_prefix(graph.texts[i], starting_words)
        if parts is None:
            excluded.append(i)
        else:
            prefixes[i] = parts
    return SplitAssignment(
        full_ids=tuple(i for i in range(n) if i not in partial_set),
        partial_ids=tuple(partial.tolist()),
        starting_words=starting_words,
        prefixes=prefixes,
        excluded=tuple(excluded),
    )


def remove_partial_partial_edges(graph: TextAttributedGraph, split: SplitAssignment) -> TextAttributedGraph:
    """Drop every edge whose two endpoints are both partially observed."""
    mask = np.zeros(graph.node_count, dtype=bool)
    ids = np.asarray(split.partial_ids, dtype=np.int64)
    if len(ids) and (ids.min() < 0 or ids.max() >= graph.node_count):
        raise IndexError("split ids out of range for graph")
    mask[ids] = True
    e = graph.edges
    keep = ~(mask[e[:, 0]] & mask[e[:, 1]]) if len(e) else np.zeros(0, dtype=bool)
    return graph.with_edges(e[keep])


def sample_subgraph(
    graph: TextAttributedGraph,
    seed_fraction: float,
    fanouts: Sequence[int],
    seed: int = 0,
) -> TextAttributedGraph:
    """Layered neighbor sampling from uniformly drawn seed nodes.

    At each layer every frontier node draws ``min(fanout, degree)`` distinct
    neighbors; newly reached nodes form the next frontier. Returns the
    induced subgraph on everything visited.
    """
    if not 0 < seed_fraction <= 1:
        raise ValueError("seed_fraction must lie in (0, 1]")
    if not len(fanouts):
        raise ValueError("fanouts must be non-empty")
    rng = np.random.default_rng(seed)
    n = graph.node_count
    seeds = np.sort(rng.choice(n, size=_ceil_count(seed_fraction, n), replace=False))
    visited = set(seeds.tolist())
    frontier = seeds.tolist()
    for fanout in fanouts:
        nxt = []
        for node in frontier:
            nbrs = graph.neighbors(node)
            if not len(nbrs):
                continue
            picked = rng.choice(nbrs, size=min(int(fanout), len(nbrs)), replace=False)
            for j in sorted(picked.tolist()):
                if j not in visited:
                    visited.add(j)
                    nxt.append(j)
        frontier = nxt
    return graph.induced_subgraph(sorted(visited))
