"""Baselines and generated-text reconstruction for node-level missing features."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..text_embed import EmbeddingProviderSpec, embed_texts

IMPUTATION_STRATEGIES = ("zero", "random", "global_mean", "toporag_text")


def impute_features(
    features: np.ndarray,
    missing: np.ndarray,
    strategy: str,
    *,
    seed: int = 0,
    texts: Mapping[int, str] | None = None,
    provider: EmbeddingProviderSpec | None = None,
) -> np.ndarray:
    """Fill the rows flagged in ``missing`` (a boolean node mask) and return a copy.

    ``toporag_text`` embeds the generated text of each missing node with
    ``provider``; ``texts`` maps node id to that text.
    """
    x = np.array(features, dtype=np.float64)
    mask = np.asarray(missing, dtype=bool)
    if mask.shape != (x.shape[0],):
        raise ValueError("missing mask must flag whole nodes")
    rows = np.flatnonzero(mask)
    if not len(rows):
        return x
    if strategy == "zero":
        x[rows] = 0.0
    elif strategy == "random":
        x[rows] = np.random.default_rng(seed).standard_normal((len(rows), x.shape[1]))
    elif strategy == "global_mean":
        observed = x[~mask]
        x[rows] = observed.mean(axis=0) if len(observed) else 0.0
    elif strategy == "toporag_text":
        if texts is None or provider is None:
            raise ValueError("toporag_text needs generated texts and a provider")
        absent = [int(i) for i in rows if int(i) not in texts]
        if absent:
            raise ValueError(f"no generated text for missing nodes {absent[:10]}")
        vecs = embed_texts(provider, [texts[int(i)] for i in rows])
        if vecs.shape[1] != x.shape[1]:
            raise ValueError(f"provider dimension {vecs.shape[1]} does not match features {x.shape[1]}")
        x[rows] = vecs
    else:
        raise ValueError(f"unknown imputation strategy {strategy!r}")
    return x


def generated_texts(records) -> dict[int, str]:
    """Observed prefix plus generated continuation for each non-excluded record."""
    out = {}
    for rec in records:
        if not rec.excluded and rec.output:
            out[rec.target] = f"{rec.prefix} {rec.output}".strip()
    return out
