"""Prompt assembly, generation backends and the experiment runner.

Remote wire contract: ``POST {endpoint}/generate`` with
``{"model", "prompt", "max_words", "temperature"}`` answering ``{"text": str}``.
"""

from __future__ import annotations

import itertools
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import SplitAssignment, TextAttributedGraph
from .retrieval import RetrievalPlan, TopKIndex, retrieve_ids
from .text_embed import EmbeddingProviderSpec, ProviderError, _post_with_retry

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "continue-v1"
CONTEXT_LIMIT = "context_limit"
BACKEND_ERROR = "backend_error"
RETRIEVAL_ERROR = "retrieval_error"

# words to generate per dataset, from the average text length of each corpus
WORD_BUDGETS = {
    "cora": 150,
    "pubmed": 250,
    "arxiv": 200,
    "product": 150,
    "book": 300,
    "epinion": 500,
    "music": 250,
    "pantry": 200,
    "enron": 300,
}


class BackendError(RuntimeError):
    pass


def estimate_tokens(text: str) -> int:
    """Conservative token estimate: ceil(1.4 * whitespace tokens)."""
    return (14 * len(text.split()) + 9) // 10


@dataclass(frozen=True)
class PromptBundle:
    target: int
    prefix: str
    retrieved: tuple[str, ...]
    template: str
    word_budget: int
    prompt: str
    estimated_tokens: int


def _render_continue_v1(prefix: str, retrieved: Sequence[str], word_budget: int) -> str:
    parts = [f"Continue the following text in the same style; write approximately {word_budget} words."]
    for n, text in enumerate(retrieved, 1):
        parts.append(f"Reference {n}:\n{text}")
    parts.append(f"Text to continue: {prefix}")
    return "\n\n".join(parts)


TEMPLATES = {DEFAULT_TEMPLATE: _render_continue_v1}


def assemble_prompt(
    prefix: str,
    retrieved: Sequence[str],
    word_budget: int,
    template: str = DEFAULT_TEMPLATE,
    target: int = -1,
) -> PromptBundle:
    if word_budget <= 0:
        raise ValueError("word budget must be positive")
    try:
        render = TEMPLATES[template]
    except KeyError:
        raise ValueError(f"unknown template {template!r}") from None
    prompt = render(prefix, retrieved, word_budget)
    return PromptBundle(target, prefix, tuple(retrieved), template, word_budget, prompt, estimate_tokens(prompt))


def context_guard(bundle: PromptBundle, limit_tokens: int) -> str | None:
    """``None`` to accept, else the exclusion reason."""
    if limit_tokens <= 0:
        raise ValueError("limit must be positive")
    return CONTEXT_LIMIT if bundle.estimated_tokens > limit_tokens else None


@dataclass(frozen=True)
class GenerationBackendSpec:
    endpoint: str = "mock"
    model: str = "mock"
    max_words: int = 150
    temperature: float = 0.0
    timeout: float = 60.0
    auth_env: str = "GEN_API_KEY"
    max_in_flight: int = 4
    retries: int = 3
    backoff: float = 1.0

    def __post_init__(self):
        if self.max_words < 1:
            raise ValueError("max_words must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def is_mock(self) -> bool:
        return self.endpoint == "mock"

    @property
    def backend_id(self) -> str:
        return "mock" if self.is_mock else f"{self.endpoint}#{self.model}"


def mock_generate(bundle: PromptBundle) -> str:
    """Deterministic stand-in for an LLM.

    Emits the first ``word_budget`` words of the retrieved texts (cycled), or
    the observed prefix with its words reversed when nothing was retrieved.
    """
    words = " ".join(bundle.retrieved).split()
    if words:
        return " ".join(itertools.islice(itertools.cycle(words), bundle.word_budget))
    return " ".join(reversed(bundle.prefix.split()))


def generate(backend: GenerationBackendSpec, bundle: PromptBundle) -> str:
    if backend.is_mock:
        text = mock_generate(bundle)
    else:
        body = {
            "model": backend.model,
            "prompt": bundle.prompt,
            "max_words": bundle.word_budget,
            "temperature": backend.temperature,
        }
        try:
            payload = _post_with_retry(backend.endpoint.rstrip("/") + "/generate", body, backend, backend.auth_env)
        except ProviderError as exc:
            raise BackendError(str(exc)) from exc
        text = payload.get("text") if isinstance(payload, dict) else None
        if not isinstance(text, str):
            raise BackendError("response has no 'text' field")
    if not text.strip():
        raise BackendError("empty backend response")
    return text


@dataclass
class GenerationRecord:
    target: int
    strategy: str
    plan_key: str
    backend_id: str
    starting_words: int
    prefix: str
    reference: str
    prompt: str = ""
    retrieved_ids: list[int] = field(default_factory=list)
    output: str | None = None
    excluded: bool = False
    reason: str | None = None

    @property
    def key(self) -> tuple:
        return (self.target, self.plan_key, self.backend_id, self.starting_words)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> GenerationRecord:
        return cls(**json.loads(line))


class RecordStore:
    """Append-only JSON-lines store of generation records; later lines win."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> dict[tuple, GenerationRecord]:
        out: dict[tuple, GenerationRecord] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = GenerationRecord.from_json(line)
                        out[rec.key] = rec
        return out

    def append(self, record: GenerationRecord) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(record.to_json() + "\n")

    def compact(self) -> int:
        """Rewrite the store with one line per key, sorted; returns the line count."""
        with self._lock:
            recs = sorted(self.load().values(), key=lambda r: (r.target, r.plan_key, r.backend_id, r.starting_words))
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                for rec in recs:
                    fh.write(rec.to_json() + "\n")
            tmp.replace(self.path)
            return len(recs)


def sample_targets(split: SplitAssignment, sample_size: int, seed: int) -> list[int]:
    eligible = sorted(split.prefixes)
    if sample_size > len(eligible):
        raise ValueError(f"sample_size {sample_size} exceeds {len(eligible)} usable partial nodes")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(eligible, size=sample_size, replace=False)) if sample_size else []


def run_experiment(
    graph: TextAttributedGraph,
    split: SplitAssignment,
    plan: RetrievalPlan,
    backend: GenerationBackendSpec,
    sample_size: int,
    seed: int = 0,
    word_budget: int = 150,
    limit_tokens: int = 4096,
    *,
    index: TopKIndex | None = None,
    text_emb=None,
    provider: EmbeddingProviderSpec | None = None,
    store: RecordStore | None = None,
    template: str = DEFAULT_TEMPLATE,
) -> list[GenerationRecord]:
    """Generate continuations for sampled partial nodes under one retrieval plan.

    Records already in ``store`` for the same (node, plan, backend, starting
    words) key are reused; per-record failures become excluded records.
    """
    targets = sample_targets(split, sample_size, seed)
    if plan.pool is None:
        plan = RetrievalPlan(plan.strategy, plan.k, plan.offset, plan.seed, tuple(split.full_ids))
    done = store.load() if store is not None else {}

    def one(target: int) -> GenerationRecord:
        prefix, hidden = split.prefixes[target]
        rec = GenerationRecord(
            target=target,
            strategy=plan.strategy,
            plan_key=plan.key,
            backend_id=backend.backend_id,
            starting_words=split.starting_words,
            prefix=prefix,
            reference=hidden,
        )
        if rec.key in done:
            return done[rec.key]
        try:
            ranked = retrieve_ids(
                plan, target, index=index, graph=graph, partial_text=prefix, text_emb=text_emb, provider=provider
            )
        except (ValueError, KeyError, ProviderError) as exc:
            rec.excluded, rec.reason = True, RETRIEVAL_ERROR
            log.warning("node %d: retrieval failed: %s", target, exc)
            return _persist(rec)
        rec.retrieved_ids = [j for j, _ in ranked]
        bundle = assemble_prompt(prefix, [graph.texts[j] for j in rec.retrieved_ids], word_budget, template, target)
        rec.prompt = bundle.prompt
        reason = context_guard(bundle, limit_tokens)
        if reason is not None:
            rec.excluded, rec.reason = True, reason
            return _persist(rec)
        try:
            rec.output = generate(backend, bundle)
        except BackendError as exc:
            rec.excluded, rec.reason = True, BACKEND_ERROR
            log.warning("node %d: generation failed: %s", target, exc)
        return _persist(rec)

    def _persist(rec: GenerationRecord) -> GenerationRecord:
        if store is not None:
            store.append(rec)
        return rec

    if backend.is_mock or backend.max_in_flight <= 1:
        records = [one(t) for t in targets]
    else:
        with ThreadPoolExecutor(max_workers=backend.max_in_flight) as pool:
            records = list(pool.map(one, targets))
    return sorted(records, key=lambda r: r.target)
