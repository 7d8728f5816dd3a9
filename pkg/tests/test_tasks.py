import json

import numpy as np
import pytest

from toporag.evaluation import (
    TaskEvalConfig,
    boost,
    dump_report,
    evaluate_records,
    generated_texts,
    hits_at_k,
    impute_features,
    link_prediction_eval,
    train_node_classifier,
)
from toporag.evaluation.tasks import _MLP, convolution_operator, node_split, propagate, sample_non_edges
from toporag.generation import GenerationRecord
from toporag.text_embed import EmbeddingProviderSpec, fallback_embed

from conftest import make_graph, path_graph, random_graph


def two_block(rng, n=80, p_in=0.2, p_out=0.01):
    y = np.repeat([0, 1], n // 2)
    u = np.triu(rng.random((n, n)) < np.where(y[:, None] == y[None, :], p_in, p_out), 1)
    return make_graph(n, np.argwhere(u), labels=tuple(int(v) for v in y)), y


def test_config_defaults():
    nc = TaskEvalConfig()
    assert (nc.hidden, nc.dropout, nc.lr, nc.weight_decay, nc.epochs, nc.patience) == (64, 0.5, 0.01, 5e-4, 1000, 100)
    assert nc.optimizer == "sgd"
    lp = TaskEvalConfig.link_prediction()
    assert (lp.model, lp.hidden, lp.dropout, lp.lr, lp.negatives, lp.hits_k) == ("propagated_mlp", 256, 0.0, 0.001, 10_000, 100)
    for bad in (dict(model="gcn"), dict(lr=0), dict(dropout=1.0), dict(seeds=())):
        with pytest.raises(ValueError):
            TaskEvalConfig(**bad)


def test_convolution_operator():
    s = convolution_operator(path_graph(3)).toarray()
    d = np.array([2, 3, 2]) ** -0.5
    expected = d[:, None] * np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]]) * d[None, :]
    assert np.allclose(s, expected)
    x = np.arange(6.0).reshape(3, 2)
    assert np.allclose(propagate(x, path_graph(3)), expected @ expected @ x)


def test_mlp_gradients_match_finite_differences(rng):
    cfg = TaskEvalConfig(dropout=0.0)
    net = _MLP([3, 5, 2], rng, cfg)
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((4, 2))

    def loss():
        return float((net.forward(x, train=False)[0] * w).sum())

    out, cache = net.forward(x, train=False)
    grads = net.backward(w, cache)
    for p, g in zip(net.params, grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + 1e-6
            up = loss()
            p[idx] = old - 1e-6
            down = loss()
            p[idx] = old
            assert (up - down) / 2e-6 == pytest.approx(g[idx], abs=1e-5)


def test_node_classification_separable(rng):
    g, y = two_block(rng)
    x = np.eye(2)[y] + 0.1 * rng.standard_normal((80, 2))
    res = train_node_classifier(x, g, g.labels, TaskEvalConfig(seeds=(0, 1, 2)))
    assert res.mean >= 0.95 and len(res.scores) == 3
    again = train_node_classifier(x, g, g.labels, TaskEvalConfig(seeds=(0, 1, 2)))
    assert again.scores == res.scores


def test_node_classification_chance_on_shuffled_labels(rng):
    g, y = two_block(rng, n=200)
    x = rng.standard_normal((200, 8))
    labels = tuple(int(v) for v in rng.permutation(y))
    res = train_node_classifier(x, g, labels, TaskEvalConfig(seeds=(0, 1, 2)))
    sigma = np.sqrt(0.25 / 40)
    assert abs(res.mean - 0.5) <= 3 * sigma


def test_node_split_and_missing_class(rng):
    train, val, test = node_split(20, [0, 1, 2], seed=0)
    assert list(test) == [0, 1, 2]
    assert set(train) | set(val) == set(range(3, 20)) and not set(train) & set(val)
    g = path_graph(6)
    with pytest.raises(ValueError, match="without training"):
        train_node_classifier(np.ones((6, 2)), g, (0, 0, 0, 0, 0, 1), test_nodes=[5])


def test_hits_at_k():
    neg = np.arange(200.0)
    assert hits_at_k([500.0, 600.0], neg) == 1.0
    assert hits_at_k([100.0, 101.0], neg) == 0.5  # 100th highest negative is 100
    with pytest.raises(ValueError):
        hits_at_k([1.0], np.arange(50.0))
    pos = np.array([1.0, 5.0, 150.0])
    assert hits_at_k(np.exp(pos / 50), np.exp(neg / 50)) == hits_at_k(pos, neg)


def test_hits_random_scores_rank_statistics():
    rng = np.random.default_rng(0)
    vals = [hits_at_k(rng.random(2000), rng.random(10_000)) for _ in range(5)]
    assert np.mean(vals) == pytest.approx(100 / 10_000, abs=0.005)


def test_sample_non_edges(rng):
    g = random_graph(rng, 30, 0.2)
    neg = sample_non_edges(30, g.edges, 100, np.random.default_rng(0))
    edges = set(map(tuple, g.edges.tolist()))
    assert len(neg) == 100 and len(set(map(tuple, neg.tolist()))) == 100
    assert not any(tuple(p) in edges or p[0] >= p[1] for p in neg.tolist())
    all_neg = sample_non_edges(30, g.edges, 10_000, np.random.default_rng(0))
    assert len(all_neg) == 30 * 29 // 2 - g.edge_count


def test_link_prediction_flags_and_determinism(rng):
    g, y = two_block(rng, n=60, p_in=0.5)
    x = np.eye(2)[y]
    cfg = TaskEvalConfig.link_prediction(epochs=20, seeds=(0,))
    a = link_prediction_eval(x, g, cfg)
    assert a.flags == ["few_test_edges"] and 0 <= a.mean <= 1
    assert link_prediction_eval(x, g, cfg).scores == a.scores


def test_imputation_strategies(rng):
    x = np.array([[1.0, 5.0], [3.0, 7.0], [9.0, 9.0]])
    miss = np.array([False, False, True])
    assert np.array_equal(impute_features(x, miss, "zero")[2], [0, 0])
    assert np.allclose(impute_features(x, miss, "global_mean")[2], [2.0, 6.0])
    r1 = impute_features(x, miss, "random", seed=3)
    assert np.array_equal(r1, impute_features(x, miss, "random", seed=3)) and np.array_equal(r1[:2], x[:2])
    spec = EmbeddingProviderSpec(dimension=16)
    feats = np.zeros((3, 16))
    out = impute_features(feats, miss, "toporag_text", texts={2: "generated words"}, provider=spec)
    assert np.allclose(out[2], fallback_embed(["generated words"], 16)[0])
    with pytest.raises(ValueError, match="no generated text"):
        impute_features(feats, miss, "toporag_text", texts={}, provider=spec)
    none = np.zeros(3, dtype=bool)
    for s in ("zero", "random", "global_mean", "toporag_text"):
        assert np.array_equal(impute_features(x, none, s, texts={}, provider=spec), x)


def _rec(target, output, reference, excluded=False, reason=None):
    return GenerationRecord(target, "topo", "topo:k3:o0", "mock", 2, "a b", reference, output=output, excluded=excluded, reason=reason)


def test_generated_texts():
    recs = [_rec(0, "c d", "c d"), _rec(1, None, "x", True, "context_limit")]
    assert generated_texts(recs) == {0: "a b c d"}


def test_evaluate_records_and_report(tmp_path):
    emb = lambda toks: fallback_embed(list(toks), 32)
    recs = [
        _rec(0, "a b the cat sat on the mat", "the cat sat on the mat"),
        _rec(1, "dogs run fast", "the cat sat on the mat"),
        _rec(2, None, "zzz", True, "backend_error"),
    ]
    rep = evaluate_records(recs, emb)
    assert rep.scored == 2 and rep.excluded == 1 and rep.exclusion_reasons == {"backend_error": 1}
    assert rep.per_record[0]["bleu4"] == pytest.approx(1.0)
    for m in ("bleu4", "rouge_l", "emb_f1"):
        assert rep.means[m] == pytest.approx(np.mean([r[m] for r in rep.per_record]))
    dump_report(rep, tmp_path / "r.json", tmp_path / "r.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["counts"] == {"scored": 2, "excluded": 1} and data["fingerprint"] == rep.fingerprint
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 3
    base = evaluate_records(recs[1:], emb)
    gain = boost(rep, base)
    assert gain["bleu4"] == pytest.approx((rep.means["bleu4"] - base.means["bleu4"]) / base.means["bleu4"])
