"""Text embeddings: a remote provider client and a deterministic offline fallback.

Remote wire contract: ``POST {endpoint}/embed`` with
``{"model": str, "texts": [str]}`` (plus ``"granularity": "token"`` for
token vectors) answering ``{"vectors": [[float]]}``.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

from .embeddings import cosine, unit_rows

log = logging.getLogger(__name__)

FALLBACK = "fallback"


class ProviderError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmbeddingProviderSpec:
    endpoint: str = FALLBACK
    model: str = "fallback-char3"
    dimension: int = 256
    batch_size: int = 32
    timeout: float = 30.0
    auth_env: str = "EMBED_API_KEY"
    seed: int = 0
    max_in_flight: int = 4
    retries: int = 3
    backoff: float = 0.5
    cache_dir: str | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def is_fallback(self) -> bool:
        return self.endpoint == FALLBACK


def _gram_hash(gram: str, seed: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=str(seed).encode()).digest()
    return int.from_bytes(digest, "little")


def _char_grams(text: str) -> list[str]:
    if len(text) < 3:
        return [text] if text else []
    return [text[i:i + 3] for i in range(len(text) - 2)]


def fallback_embed(texts: Sequence[str], dim: int = 256, seed: int = 0) -> np.ndarray:
    """Signed hashed character-3-gram counts, L2-normalized.

    Each 3-gram's seeded hash picks a bucket and a sign, so texts sharing more
    3-grams have higher cosine. Pure function of (text, dim, seed).
    """
    if dim < 8:
        raise ValueError("fallback dimension must be >= 8")
    out = np.zeros((len(texts), dim))
    for row, text in enumerate(texts):
        for gram in _char_grams(text):
            h = _gram_hash(gram, seed)
            out[row, h % dim] += 1.0 if (h >> 63) & 1 else -1.0
    return unit_rows(out)


class _VectorCache:
    """One file per (model, text) holding the raw little-endian float64 vector."""

    def __init__(self, root: str | Path, model: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.model = model
        self._lock = threading.Lock()

    def _path(self, text: str) -> Path:
        key = hashlib.sha256(f"{self.model}\0{text}".encode("utf-8")).hexdigest()
        return self.root / f"{key}.bin"

    def get(self, text: str, dim: int) -> np.ndarray | None:
        path = self._path(text)
        if not path.exists():
            return None
        vec = np.frombuffer(path.read_bytes(), dtype="<f8")
        return vec.astype(np.float64) if vec.shape == (dim,) else None

    def put(self, text: str, vec: np.ndarray) -> None:
        path = self._path(text)
        tmp = path.with_suffix(f".tmp{threading.get_ident()}")
        with self._lock:
            tmp.write_bytes(np.asarray(vec, dtype="<f8").tobytes())
            os.replace(tmp, path)


def _post_with_retry(url: str, body: dict, spec, auth_env: str) -> dict:
    headers = {}
    token = os.environ.get(auth_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    last: Exception | None = None
    for attempt in range(spec.retries):
        try:
            resp = httpx.post(url, json=body, headers=headers, timeout=spec.timeout)
            resp.raise_for_status()
            return resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            last = exc
            log.warning("request to %s failed (attempt %d/%d): %s", url, attempt + 1, spec.retries, exc)
            if attempt + 1 < spec.retries:
                time.sleep(spec.backoff * 2**attempt)
    raise ProviderError(f"{url}: giving up after {spec.retries} attempts: {last}")


def _remote_batch(spec: EmbeddingProviderSpec, batch: list[str], granularity: str) -> np.ndarray:
    body: dict = {"model": spec.model, "texts": batch}
    if granularity != "text":
        body["granularity"] = granularity
    payload = _post_with_retry(spec.endpoint.rstrip("/") + "/embed", body, spec, spec.auth_env)
    vectors = payload.get("vectors") if isinstance(payload, dict) else None
    if not isinstance(vectors, list) or len(vectors) != len(batch):
        raise ProviderError(f"expected {len(batch)} vectors in response")
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != spec.dimension:
        raise ProviderError(f"provider returned dimension {arr.shape[-1]}, expected {spec.dimension}")
    return arr


def embed_texts(
    provider: EmbeddingProviderSpec,
    texts: Sequence[str],
    granularity: str = "text",
) -> np.ndarray:
    """Embed ``texts`` in order; rows are L2-normalized.

    Empty strings are never sent to the provider and come back as zero rows.
    """
    texts = list(texts)
    if not texts:
        raise ValueError("no texts to embed")
    empties = [i for i, t in enumerate(texts) if t == ""]
    if empties:
        log.warning("%d empty text(s) embedded as zero vectors: %s", len(empties), empties[:10])
    if provider.is_fallback:
        return fallback_embed(texts, provider.dimension, provider.seed)

    out = np.zeros((len(texts), provider.dimension))
    cache = _VectorCache(provider.cache_dir, provider.model) if provider.cache_dir else None
    todo: list[int] = []
    for i, text in enumerate(texts):
        if text == "":
            continue
        vec = cache.get(text, provider.dimension) if cache and granularity == "text" else None
        if vec is None:
            todo.append(i)
        else:
            out[i] = vec
    batches = [todo[s:s + provider.batch_size] for s in range(0, len(todo), provider.batch_size)]

    def run(idx: list[int]) -> tuple[list[int], np.ndarray]:
        return idx, _remote_batch(provider, [texts[i] for i in idx], granularity)

    with ThreadPoolExecutor(max_workers=max(1, provider.max_in_flight)) as pool:
        for idx, arr in pool.map(run, batches):
            arr = unit_rows(arr)
            out[idx] = arr
            if cache and granularity == "text":
                for i, vec in zip(idx, arr):
                    cache.put(texts[i], vec)
    return unit_rows(out)


def token_embedder(provider: EmbeddingProviderSpec) -> Callable[[Sequence[str]], np.ndarray]:
    """Callable mapping a token list to one vector per token."""
    if provider.is_fallback:
        return lambda tokens: fallback_embed(list(tokens), provider.dimension, provider.seed)
    return lambda tokens: embed_texts(provider, tokens, granularity="token")


def text_similarity(u, v) -> float:
    return cosine(u, v)


def node_text_matrix(
    graph,
    provider: EmbeddingProviderSpec,
    nodes: Sequence[int] | None = None,
    doc_filter: Callable[[int, tuple[str, ...]], Sequence[str]] | None = None,
) -> np.ndarray:
    """Per-node text embeddings for a graph.

    Single-text nodes embed their text; multi-text nodes average their
    documents' embeddings and re-normalize. ``doc_filter`` selects a subset of
    documents (e.g. sent vs received emails).
    """
    nodes = list(range(graph.node_count)) if nodes is None else list(nodes)
    if graph.documents is None:
        return embed_texts(provider, [graph.texts[i] for i in nodes])
    flat, owner = [], []
    for row, node in enumerate(nodes):
        docs = graph.node_documents(node)
        if doc_filter is not None:
            docs = doc_filter(node, docs)
        flat.extend(docs)
        owner.extend([row] * len(docs))
    out = np.zeros((len(nodes), provider.dimension))
    if flat:
        vecs = embed_texts(provider, flat)
        np.add.at(out, np.asarray(owner), vecs)
    return unit_rows(out)
