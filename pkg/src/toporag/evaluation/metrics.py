"""Text generation metrics: smoothed BLEU-4, ROUGE-L F1 and greedy embedding F1."""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Callable, Sequence

import numpy as np

from ..embeddings import unit_rows

TOKENIZER_VERSION = "lower-wordpunct-v1"
SMOOTHING_EPSILON = 0.1
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on whitespace and punctuation boundaries.

    Runs of word characters form one token; each punctuation mark is its own token.
    """
    return _TOKEN_RE.findall(text.lower())


def strip_observed_prefix(generated: str, prefix: str) -> str:
    """Remove ``prefix`` from the start of ``generated`` (whitespace-normalized)."""
    pre = prefix.split()
    if not pre:
        return generated
    gen = generated.split()
    if gen[:len(pre)] == pre:
        return " ".join(gen[len(pre):])
    return generated


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str, reference: str) -> float:
    """Single-reference sentence BLEU-4.

    Modified n-gram precisions for n = 1..4; a zero (or empty) precision
    becomes ``(0 + 0.1) / (denominator + 0.1)``. Geometric mean times the
    brevity penalty ``exp(1 - r/c)`` when the candidate is shorter.
    """
    cand, ref = tokenize(candidate), tokenize(reference)
    c, r = len(cand), len(ref)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngrams(cand, n)
        ref_counts = _ngrams(ref, n)
        matched = sum(min(cnt, ref_counts[g]) for g, cnt in cand_counts.items())
        total = max(c - n + 1, 0)
        if matched == 0:
            p = SMOOTHING_EPSILON / (total + SMOOTHING_EPSILON)
        else:
            p = matched / total
        log_sum += math.log(p)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / 4.0)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length (bit-parallel over ``a``)."""
    if not a or not b:
        return 0
    masks: dict[str, int] = {}
    for i, tok in enumerate(a):
        masks[tok] = masks.get(tok, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for tok in b:
        u = v & masks.get(tok, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F1 (beta = 1)."""
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


def embedding_f1(
    candidate: str,
    reference: str,
    token_embedder: Callable[[Sequence[str]], np.ndarray],
) -> tuple[float, float, float]:
    """Greedy-matching precision, recall and F1 over token embeddings (no idf).

    Precision averages, over candidate tokens, the best cosine to any
    reference token; recall is the mirror image.
    """
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0, 0.0, 0.0
    vocab = sorted(set(cand) | set(ref))
    vecs = unit_rows(token_embedder(vocab))
    pos = {tok: i for i, tok in enumerate(vocab)}
    c = vecs[[pos[t] for t in cand]]
    r = vecs[[pos[t] for t in ref]]
    # negative cosines count as no match so all scores stay in [0, 1]
    sim = np.clip(c @ r.T, 0.0, 1.0)
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    if precision + recall <= 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)
