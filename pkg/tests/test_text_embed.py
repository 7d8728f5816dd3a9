import decimal

import numpy as np
import pytest

from toporag.text_embed import (
    EmbeddingProviderSpec,
    ProviderError,
    embed_texts,
    fallback_embed,
    node_text_matrix,
    text_similarity,
    token_embedder,
)

from conftest import make_graph


def vec_server(loopback, dim=4, fail_first=0):
    state = {"fails": fail_first}

    def handler(path, body):
        if state["fails"]:
            state["fails"] -= 1
            return 503, {"error": "busy"}
        # deterministic vector per text: its length and first code point
        return 200, {"vectors": [[len(t), ord(t[0]), 1.0, 0.5][:dim] for t in body["texts"]]}

    return loopback(handler)


def remote(url, **kw):
    kw.setdefault("dimension", 4)
    return EmbeddingProviderSpec(endpoint=url, model="m", backoff=0.0, **kw)


def test_fallback_identical_texts():
    v = fallback_embed(["same text", "same text"], 64)
    assert np.array_equal(v[0], v[1])
    assert text_similarity(v[0], v[1]) == pytest.approx(1.0)


def test_fallback_gram_overlap_ordering():
    v = fallback_embed(["abcdef", "abcdxy", "uvwxyz"], 256)
    assert text_similarity(v[0], v[1]) > text_similarity(v[0], v[2])


def test_fallback_per_text_purity(rng):
    texts = [f"text number {i}" for i in range(8)]
    perm = rng.permutation(8)
    a = fallback_embed(texts, 32, seed=3)
    b = fallback_embed([texts[i] for i in perm], 32, seed=3)
    assert np.array_equal(a[perm], b)


def test_fallback_dispatch_and_empty_rows():
    spec = EmbeddingProviderSpec(dimension=32, seed=5)
    assert np.array_equal(embed_texts(spec, ["hello", "world"]), fallback_embed(["hello", "world"], 32, 5))
    out = embed_texts(spec, ["", "abc"])
    assert not out[0].any() and np.linalg.norm(out[1]) == pytest.approx(1.0)


def test_text_similarity_high_precision(rng):
    decimal.getcontext().prec = 50
    for _ in range(20):
        u, v = rng.standard_normal(6), rng.standard_normal(6)
        du, dv = [decimal.Decimal(float(x)) for x in u], [decimal.Decimal(float(x)) for x in v]
        dot = sum(a * b for a, b in zip(du, dv))
        ref = dot / (sum(a * a for a in du).sqrt() * sum(b * b for b in dv).sqrt())
        assert abs(text_similarity(u, v) - float(ref)) < 1e-12
    assert text_similarity(np.array([1.0, 0]), np.array([0, 1.0])) == 0.0


def test_remote_batching_preserves_order(loopback):
    srv = vec_server(loopback)
    texts = [chr(ord("a") + i) * (i + 1) for i in range(10)]
    out = embed_texts(remote(srv.url, batch_size=3, max_in_flight=2), texts)
    assert len(srv.requests) == 4
    assert sorted(len(body["texts"]) for _, body in srv.requests) == [1, 3, 3, 3]
    expected = np.array([[len(t), ord(t[0]), 1.0, 0.5] for t in texts])
    expected /= np.linalg.norm(expected, axis=1, keepdims=True)
    assert np.allclose(out, expected)
    assert all(path == "/embed" for path, _ in srv.requests)


def test_remote_retries_then_succeeds(loopback):
    srv = vec_server(loopback, fail_first=2)
    out = embed_texts(remote(srv.url), ["xy"])
    assert len(srv.requests) == 3 and out.shape == (1, 4)


def test_remote_gives_up(loopback):
    srv = vec_server(loopback, fail_first=10)
    with pytest.raises(ProviderError):
        embed_texts(remote(srv.url, retries=2), ["xy"])
    assert len(srv.requests) == 2


def test_remote_dimension_mismatch(loopback):
    srv = vec_server(loopback)
    with pytest.raises(ProviderError, match="dimension"):
        embed_texts(remote(srv.url, dimension=8), ["xy"])


def test_auth_header_and_token_granularity(loopback, monkeypatch):
    monkeypatch.setenv("MY_EMBED_KEY", "s3cret")
    srv = vec_server(loopback)
    spec = remote(srv.url, auth_env="MY_EMBED_KEY")
    token_embedder(spec)(["ab", "cd"])
    assert srv.requests[0][1]["granularity"] == "token"
    assert srv.headers[0]["Authorization"] == "Bearer s3cret"


def test_cache_avoids_repeat_requests(loopback, tmp_path):
    srv = vec_server(loopback)
    spec = remote(srv.url, cache_dir=str(tmp_path / "cache"))
    a = embed_texts(spec, ["ab", "cd"])
    b = embed_texts(spec, ["cd", "ab"])
    assert len(srv.requests) == 1
    assert np.array_equal(a[::-1], b)


def test_node_text_matrix_multi_text():
    g = make_graph(3, [(0, 1)], documents=(("hello there", "general"), (), ("hi",)))
    spec = EmbeddingProviderSpec(dimension=32)
    out = node_text_matrix(g, spec)
    docs = fallback_embed(["hello there", "general"], 32)
    expected = docs.sum(axis=0)
    assert np.allclose(out[0], expected / np.linalg.norm(expected))
    assert not out[1].any()
    assert np.allclose(out[2], fallback_embed(["hi"], 32)[0])
