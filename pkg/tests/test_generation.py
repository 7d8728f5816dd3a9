import numpy as np
import pytest

from toporag.generation import (
    BackendError,
    GenerationBackendSpec,
    GenerationRecord,
    RecordStore,
    assemble_prompt,
    context_guard,
    estimate_tokens,
    generate,
    mock_generate,
    run_experiment,
)
from toporag.graph import split_nodes
from toporag.proximity import DiffusionConfig, proximity_embeddings
from toporag.retrieval import RetrievalPlan, build_index, score_source

from conftest import make_graph, random_graph


def test_prompt_rendering():
    b0 = assemble_prompt("The cat", [], 50)
    assert "Reference" not in b0.prompt
    assert b0.prompt.startswith("Continue the following text in the same style; write approximately 50 words.")
    assert b0.prompt.endswith("Text to continue: The cat")
    b3 = assemble_prompt("x", ["one", "two", "three"], 10)
    pos = [b3.prompt.index(f"Reference {n}:") for n in (1, 2, 3)]
    assert pos == sorted(pos)
    assert b3.prompt == assemble_prompt("x", ["one", "two", "three"], 10).prompt
    weird = "  keeps\tbytes\n exactly "
    assert weird in assemble_prompt("x", [weird], 10).prompt
    with pytest.raises(ValueError):
        assemble_prompt("x", [], 0)


def test_token_estimate():
    assert estimate_tokens("") == 0
    assert estimate_tokens("a") == 2
    assert estimate_tokens("a b c d e") == 7
    assert estimate_tokens(" ".join(["w"] * 10)) == 14


def test_context_guard():
    assert context_guard(assemble_prompt("hi", [], 5), 4096) is None
    b = assemble_prompt("hi", [], 5)
    assert context_guard(b, b.estimated_tokens) is None
    assert context_guard(b, b.estimated_tokens - 1) == "context_limit"
    big = assemble_prompt("start", [" ".join(["word"] * 10_000)], 150)
    assert big.estimated_tokens > 14_000
    assert context_guard(big, 4096) == "context_limit"


def test_mock_contract():
    assert mock_generate(assemble_prompt("p", ["alpha beta gamma"], 2)) == "alpha beta"
    assert mock_generate(assemble_prompt("a b", [], 5)) == "b a"
    assert mock_generate(assemble_prompt("p", ["x y"], 5)) == "x y x y x"
    with pytest.raises(BackendError):
        generate(GenerationBackendSpec(), assemble_prompt("", [], 5))


def test_backend_spec_validation():
    with pytest.raises(ValueError):
        GenerationBackendSpec(max_words=0)
    with pytest.raises(ValueError):
        GenerationBackendSpec(temperature=-1)


def test_remote_backend(loopback, monkeypatch):
    monkeypatch.setenv("GEN_API_KEY", "tok")
    srv = loopback(lambda path, body: (200, {"text": "fixed continuation"}))
    spec = GenerationBackendSpec(endpoint=srv.url, model="m1", max_words=7, temperature=0.0, backoff=0.0)
    bundle = assemble_prompt("p", ["r"], 7)
    assert generate(spec, bundle) == "fixed continuation"
    path, body = srv.requests[0]
    assert path == "/generate"
    assert body == {"model": "m1", "prompt": bundle.prompt, "max_words": 7, "temperature": 0.0}
    assert srv.headers[0]["Authorization"] == "Bearer tok"


def test_remote_backend_failure(loopback):
    srv = loopback(lambda path, body: (500, {}))
    spec = GenerationBackendSpec(endpoint=srv.url, backoff=0.0, retries=3)
    with pytest.raises(BackendError):
        generate(spec, assemble_prompt("p", [], 3))
    assert len(srv.requests) == 3
    empty = loopback(lambda path, body: (200, {"text": "  "}))
    with pytest.raises(BackendError):
        generate(GenerationBackendSpec(endpoint=empty.url, backoff=0.0), assemble_prompt("p", [], 3))


def _fixture(rng, n=30):
    base = random_graph(rng, n, 0.2)
    texts = tuple(" ".join(f"w{i}_{k}" for k in range(12)) for i in range(n))
    g = make_graph(n, base.edges, texts=texts)
    split = split_nodes(g, 0.3, "random", 3, seed=1)
    emb = proximity_embeddings(g, DiffusionConfig(projection_dim=8))
    idx = build_index(score_source(emb), split.full_ids, K=8)
    return g, split, idx


def test_run_experiment_records(rng):
    g, split, idx = _fixture(rng)
    plan = RetrievalPlan("topo", k=3)
    recs = run_experiment(g, split, plan, GenerationBackendSpec(), 5, seed=2, word_budget=10, index=idx)
    assert len(recs) == 5 and [r.target for r in recs] == sorted(r.target for r in recs)
    for r in recs:
        assert not r.excluded and r.output
        assert set(r.retrieved_ids) <= set(split.full_ids)
        assert r.prefix == split.prefixes[r.target][0] and r.reference == split.prefixes[r.target][1]
    again = run_experiment(g, split, plan, GenerationBackendSpec(), 5, seed=2, word_budget=10, index=idx)
    assert [r.to_json() for r in recs] == [r.to_json() for r in again]
    assert run_experiment(g, split, plan, GenerationBackendSpec(), 0, index=idx) == []
    with pytest.raises(ValueError):
        run_experiment(g, split, plan, GenerationBackendSpec(), 999, index=idx)


def test_run_experiment_exclusions(rng):
    g, split, idx = _fixture(rng)
    recs = run_experiment(g, split, RetrievalPlan("topo", k=3), GenerationBackendSpec(), 4, word_budget=10, limit_tokens=5, index=idx)
    assert all(r.excluded and r.reason == "context_limit" and r.output is None for r in recs)
    bad = run_experiment(g, split, RetrievalPlan("topo", k=3, offset=7), GenerationBackendSpec(), 4, index=idx)
    assert all(r.excluded and r.reason == "retrieval_error" for r in bad)


def test_resumability(rng, tmp_path):
    g, split, idx = _fixture(rng)
    store = RecordStore(tmp_path / "r.jsonl")
    plan = RetrievalPlan("topo", k=3)
    first = run_experiment(g, split, plan, GenerationBackendSpec(), 8, seed=3, word_budget=10, index=idx, store=store)
    lines = (tmp_path / "r.jsonl").read_text().splitlines()
    assert len(lines) == 8
    (tmp_path / "r.jsonl").write_text("\n".join(lines[:4]) + "\n")
    second = run_experiment(g, split, plan, GenerationBackendSpec(), 8, seed=3, word_budget=10, index=idx, store=store)
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 8
    assert [r.to_json() for r in first] == [r.to_json() for r in second]
    assert store.compact() == 8


def test_record_store_last_wins(tmp_path):
    store = RecordStore(tmp_path / "s.jsonl")
    rec = GenerationRecord(1, "none", "none", "mock", 3, "p", "ref", output="a")
    store.append(rec)
    rec2 = GenerationRecord(1, "none", "none", "mock", 3, "p", "ref", output="b")
    store.append(rec2)
    assert store.load()[rec.key].output == "b"
    assert store.compact() == 1


def test_concurrent_remote_order(loopback, rng):
    g, split, idx = _fixture(rng)
    srv = loopback(lambda path, body: (200, {"text": "out " + str(len(body["prompt"]))}))
    spec = GenerationBackendSpec(endpoint=srv.url, max_in_flight=4, backoff=0.0)
    recs = run_experiment(g, split, RetrievalPlan("topo", k=2), spec, 6, index=idx)
    assert [r.target for r in recs] == sorted(r.target for r in recs)
    assert len(srv.requests) == 6
    assert all(r.output == "out " + str(len(r.prompt)) for r in recs)
