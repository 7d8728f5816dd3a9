"""``toporag`` command line: ingest, embed, correlate, index, generate, evaluate, impute.

Every command reads a JSON config (``--config``), writes only below the
output directory (``--out``) and exits with 0 on success, 2 on validation
errors and 3 on I/O errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, RunConfig
from .embeddings import EmbeddingMatrix, fingerprint, load_embedding, save_embedding
from .evaluation.imputation import IMPUTATION_STRATEGIES, generated_texts, impute_features
from .evaluation.report import boost, dump_report, evaluate_records
from .evaluation.tasks import TaskEvalConfig, link_prediction_eval, train_node_classifier
from .generation import WORD_BUDGETS, GenerationBackendSpec, RecordStore, run_experiment
from .graph import (
    GraphFormatError,
    SplitAssignment,
    load_graph,
    remove_partial_partial_edges,
    sample_subgraph,
    split_nodes,
    split_prefix,
    write_graph,
    write_reindex_map,
)
from .proximity import DiffusionConfig, proximity_embeddings
from .retrieval import RetrievalPlan, build_index, load_index, save_index, score_source
from .role import EigensolverCapError, WaveConfig, role_embeddings
from .text_embed import EmbeddingProviderSpec, ProviderError, embed_texts, node_text_matrix, token_embedder

log = logging.getLogger("toporag")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 2, 3
KIND_FILES = {"topo-proximity": "proximity", "topo-role": "role", "text": "text"}


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


# --- artifact helpers -------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    if not path.exists():
        raise CommandError(f"missing artifact {path}; run the earlier pipeline step first", EXIT_IO)
    return json.loads(path.read_text(encoding="utf-8"))


def _file_digest(*paths: Path) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _load_workspace(out: Path):
    manifest = _read_json(out / "graph" / "manifest.json")
    graph = load_graph(out / "graph" / "nodes.jsonl", out / "graph" / "edges.tsv")
    split = SplitAssignment.from_json(_read_json(out / "split.json"))
    return graph, split, manifest


def _embedding_path(out: Path, kind: str) -> Path:
    return out / "embeddings" / f"{kind}.bin"


def _load_emb(out: Path, kind: str, manifest: dict) -> EmbeddingMatrix:
    path = _embedding_path(out, kind)
    if not path.exists():
        raise CommandError(f"missing {kind} embeddings at {path}; run 'toporag embed' first", EXIT_IO)
    side = _read_json(Path(str(path) + ".json"))
    if side.get("config", {}).get("graph") != manifest["fingerprint"]:
        raise CommandError(f"{kind} embeddings were built for a different graph (fingerprint mismatch)")
    return load_embedding(path)


def _provider(cfg: RunConfig) -> EmbeddingProviderSpec:
    e = dict(cfg["embedding"])
    e.setdefault("seed", cfg.stage_seed("embed-fallback") if e.get("endpoint") == "fallback" else 0)
    allowed = EmbeddingProviderSpec.__dataclass_fields__
    return EmbeddingProviderSpec(**{k: v for k, v in e.items() if k in allowed})


def _word_budget(cfg: RunConfig) -> int:
    gen = cfg["generation"]
    if gen.get("word_budget"):
        return int(gen["word_budget"])
    name = (cfg["dataset"].get("name") or "").lower()
    return WORD_BUDGETS.get(name, 150)


def _backend(cfg: RunConfig, endpoint: str | None) -> GenerationBackendSpec:
    gen = cfg["generation"]
    allowed = GenerationBackendSpec.__dataclass_fields__
    kw = {k: v for k, v in gen.items() if k in allowed}
    if endpoint:
        kw["endpoint"] = endpoint
    kw["max_words"] = _word_budget(cfg)
    return GenerationBackendSpec(**kw)


# --- commands ---------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, args) -> None:
    ds = cfg["dataset"]
    if ds.get("nodes") is None or ds.get("edges") is None:
        raise CommandError("dataset.nodes and dataset.edges must be configured")
    graph = load_graph(cfg.resolve(ds["nodes"]), cfg.resolve(ds["edges"]), int(ds.get("min_text_words", 0)))
    sample = cfg["sample"]
    if sample:
        graph = sample_subgraph(graph, sample["seed_fraction"], sample["fanouts"], cfg.stage_seed("sample"))
    sp_cfg = cfg["split"]
    split = split_nodes(
        graph,
        float(sp_cfg["partial_fraction"]),
        sp_cfg["strategy"],
        int(sp_cfg["starting_words"]),
        cfg.stage_seed("split"),
    )
    graph = remove_partial_partial_edges(graph, split)
    out = cfg.output_dir
    gdir = out / "graph"
    gdir.mkdir(parents=True, exist_ok=True)
    write_graph(graph, gdir / "nodes.jsonl", gdir / "edges.tsv")
    write_reindex_map(graph, gdir / "reindex.jsonl")
    _write_json(out / "split.json", split.to_json())
    fp = _file_digest(gdir / "nodes.jsonl", gdir / "edges.tsv", out / "split.json")
    _write_json(gdir / "manifest.json", {
        "fingerprint": fp,
        "nodes": graph.node_count,
        "edges": graph.edge_count,
        "full": len(split.full_ids),
        "partial": len(split.partial_ids),
        "excluded_partial": len(split.excluded),
    })
    print(f"ingested {graph.node_count} nodes, {graph.edge_count} edges "
          f"({len(split.full_ids)} full / {len(split.partial_ids)} partial) -> {out}")


def cmd_embed(cfg: RunConfig, args) -> None:
    out = cfg.output_dir
    graph, split, manifest = _load_workspace(out)
    kind = KIND_FILES[args.what]
    if kind == "proximity":
        dcfg = DiffusionConfig(
            K=int(cfg["diffusion"]["K"]),
            alphas=tuple(cfg["diffusion"].get("alphas") or ()),
            projection_dim=int(cfg["diffusion"]["projection_dim"]),
            seed=cfg.stage_seed("projection"),
        )
        emb = proximity_embeddings(graph, dcfg)
        conf = {"graph": manifest["fingerprint"], "diffusion": dcfg.__dict__ | {"alphas": list(dcfg.alphas)}}
    elif kind == "role":
        w = cfg["wave"]
        wcfg = WaveConfig(float(w["scale"]), float(w["t_min"]), float(w["t_max"]), int(w["n_points"]), int(w["max_nodes"]))
        emb = role_embeddings(graph, wcfg)
        conf = {"graph": manifest["fingerprint"], "wave": wcfg.__dict__}
    else:
        provider = _provider(cfg)
        emb = EmbeddingMatrix(node_text_matrix(graph, provider), "text")
        conf = {"graph": manifest["fingerprint"], "provider": {"endpoint": provider.endpoint, "model": provider.model,
                                                                "dimension": provider.dimension, "seed": provider.seed}}
    emb = EmbeddingMatrix(emb.rows, kind, fingerprint(conf))
    path = _embedding_path(out, kind)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_embedding(emb, path, conf)
    print(f"wrote {kind} embeddings {emb.shape[0]}x{emb.shape[1]} -> {path}")


def cmd_correlate(cfg: RunConfig, args) -> None:
    out = cfg.output_dir
    graph, split, manifest = _load_workspace(out)
    text = _load_emb(out, "text", manifest)
    kind = args.kind or cfg["retrieval"]["topo_kind"]
    topo = _load_emb(out, kind, manifest)
    a = cfg["analysis"]
    selection = args.selection or a["selection"]
    n_pairs = graph.node_count * (graph.node_count - 1) // 2
    count = None
    if selection == "sampled" or (selection == "all_unordered_no_self" and n_pairs > int(a["pair_count"])):
        selection, count = "sampled", min(int(a["pair_count"]), n_pairs)
    seed = cfg.stage_seed("pairs")
    sample = analysis.pairwise_scores(graph, text, topo, selection, count, seed)
    lo, hi = float(sample.topo.min()), float(sample.topo.max())
    edges = np.linspace(lo, hi if hi > lo else lo + 1.0, int(a["bins"]) + 1)
    extra = {"kind": kind}
    # the literal double-sum reading (all ordered pairs, self-pairs included) for comparison
    if graph.node_count ** 2 <= int(a["pair_count"]):
        extra["pearson_all_ordered"] = analysis.pearson(
            analysis.pairwise_scores(graph, text, topo, "all_ordered", None, seed))
    layers = args.layer_sweep if args.layer_sweep is not None else int(a.get("layer_sweep") or 0)
    if layers and kind == "proximity":
        dcfg = DiffusionConfig(K=1, projection_dim=int(cfg["diffusion"]["projection_dim"]), seed=cfg.stage_seed("projection"))
        extra["layer_sweep"] = analysis.layer_sweep(graph, text, layers, dcfg, selection, count, seed)
    group = None
    if graph.labels is not None and len(set(graph.labels)) >= 2 and graph.node_count <= 5000:
        measure = "distance" if kind == "role" else "cosine"
        all_pairs = analysis.select_pairs(graph.node_count, "all_ordered")
        mat = analysis.score_pairs(text if args.group_by == "text" else topo, all_pairs,
                                   "cosine" if args.group_by == "text" else measure)
        group = analysis.group_mean_matrix(list(graph.labels), mat.reshape(graph.node_count, graph.node_count))
    report = analysis.correlation_report(sample, analysis.binned_curve(sample, edges), group, extra)
    path = out / "reports" / f"correlation_{kind}.json"
    _write_json(path, report)
    print(f"pearson({kind}) = {report['pearson']:.4f} over {report['pairs']} pairs -> {path}")


def cmd_index(cfg: RunConfig, args) -> None:
    out = cfg.output_dir
    graph, split, manifest = _load_workspace(out)
    kind = args.kind or cfg["retrieval"]["topo_kind"]
    emb = _load_emb(out, kind, manifest)
    k = args.k or int(cfg["retrieval"]["index_k"])
    index = build_index(score_source(emb, float(cfg["retrieval"]["epsilon"])), split.full_ids, k)
    path = out / "index" / f"{kind}.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_index(index, path)
    print(f"indexed {len(index)} nodes (K={k}, {kind}) -> {path}")


def _parse_grid(text: str | None) -> list[int] | None:
    if not text:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CommandError(f"bad --starting-words-grid {text!r}") from None


def cmd_generate(cfg: RunConfig, args) -> None:
    out = cfg.output_dir
    graph, split, manifest = _load_workspace(out)
    r = cfg["retrieval"]
    strategy = args.strategy
    plan = RetrievalPlan(
        strategy,
        k=args.k if args.k is not None else int(r["k"]),
        offset=args.rank_offset if args.rank_offset is not None else int(r["offset"]),
        seed=cfg.stage_seed("retrieval-random"),
        pool=tuple(split.full_ids),
    )
    index = text_emb = provider = None
    if strategy == "topo":
        kind = args.kind or r["topo_kind"]
        emb = _load_emb(out, kind, manifest)
        index_path = out / "index" / f"{kind}.jsonl"
        if not index_path.exists():
            raise CommandError(f"missing index {index_path}; run 'toporag index' first", EXIT_IO)
        index = load_index(index_path)
        if index.fingerprint != emb.fingerprint:
            raise CommandError(f"index {index_path} does not match the current {kind} embeddings (fingerprint mismatch)")
    elif strategy == "text":
        text_emb = _load_emb(out, "text", manifest)
        provider = _provider(cfg)
    backend = _backend(cfg, args.backend)
    gen = cfg["generation"]
    sample_size = args.sample_size if args.sample_size is not None else int(gen["sample_size"])
    grid = _parse_grid(args.starting_words_grid) or [split.starting_words]
    seed = cfg.stage_seed("generate-sample")
    rdir = out / "records"
    written = []
    for w in grid:
        sp_w = split if w == split.starting_words else _resplit(graph, split, w)
        name = f"{plan.key.replace(':', '_')}_w{w}.jsonl"
        store = RecordStore(rdir / name)
        n_avail = len(sp_w.prefixes)
        records = run_experiment(
            graph, sp_w, plan, backend, min(sample_size, n_avail), seed, _word_budget(cfg),
            int(gen["limit_tokens"]), index=index, text_emb=text_emb, provider=provider, store=store,
        )
        store.compact()
        excluded = sum(rec.excluded for rec in records)
        written.append(str(rdir / name))
        print(f"{plan.key} w={w}: {len(records) - excluded} generated, {excluded} excluded -> {rdir / name}")


def _resplit(graph, split: SplitAssignment, starting_words: int) -> SplitAssignment:
    prefixes, excluded = {}, []
    for i in split.partial_ids:
        parts = split_prefix(graph.texts[i], starting_words)
        if parts is None:
            excluded.append(i)
        else:
            prefixes[i] = parts
    return SplitAssignment(split.full_ids, split.partial_ids, starting_words, prefixes, tuple(excluded))


def cmd_evaluate(cfg: RunConfig, args) -> None:
    out = cfg.output_dir
    stores = [Path(p) for p in args.records] if args.records else sorted((out / "records").glob("*.jsonl"))
    if not stores:
        raise CommandError("no record stores to evaluate; run 'toporag generate' first", EXIT_IO)
    embedder = token_embedder(_provider(cfg))
    summary, reports = {}, {}
    for path in stores:
        if not path.exists():
            raise CommandError(f"missing record store {path}", EXIT_IO)
        records = sorted(RecordStore(path).load().values(), key=lambda rec: rec.target)
        report = evaluate_records(records, embedder)
        stem = path.stem
        dump_report(report, out / "reports" / f"eval_{stem}.json", out / "reports" / f"eval_{stem}.csv")
        reports[stem] = report
        summary[stem] = {"means": report.means, "scored": report.scored, "excluded": report.excluded}
        means = ", ".join(f"{m}={v:.4f}" if v is not None else f"{m}=n/a" for m, v in report.means.items())
        print(f"{stem}: {means} ({report.scored} scored, {report.excluded} excluded)")
    for stem, rep in reports.items():
        if stem.startswith("topo_"):
            suffix = stem.rsplit("_w", 1)[-1]
            base = next((s for s in reports if s.startswith("text_") and s.endswith(f"_w{suffix}")), None)
            if base is not None:
                summary[stem]["boost_over_text"] = boost(rep, reports[base])
    _write_json(out / "reports" / "eval_summary.json", summary)


def cmd_impute(cfg: RunConfig, args) -> None:
    out = cfg.output_dir
    graph, split, manifest = _load_workspace(out)
    if graph.labels is None:
        raise CommandError("imputation evaluation needs node labels")
    features = _load_emb(out, "text", manifest).rows
    missing = np.zeros(graph.node_count, dtype=bool)
    missing[list(split.partial_ids)] = True
    store_path = Path(args.records) if args.records else None
    if store_path is None:
        cands = sorted((out / "records").glob(f"topo_*_w{split.starting_words}.jsonl"))
        store_path = cands[0] if cands else None
    texts = {}
    if store_path is not None and store_path.exists():
        texts = generated_texts(RecordStore(store_path).load().values())
    provider = _provider(cfg)
    seeds = tuple(cfg["evaluation"]["seeds"])
    results = {}
    for strategy in IMPUTATION_STRATEGIES:
        if strategy == "toporag_text":
            if not all(int(i) in texts for i in np.flatnonzero(missing)):
                log.warning("skipping toporag_text: generated texts do not cover every missing node")
                continue
        x = impute_features(features, missing, strategy, seed=cfg.stage_seed("impute"), texts=texts, provider=provider)
        row = {}
        for model in ("mlp", "propagated_mlp"):
            nc = train_node_classifier(x, graph, graph.labels, TaskEvalConfig(model=model, seeds=seeds),
                                       test_nodes=np.flatnonzero(missing))
            row[f"nc_{model}"] = nc.to_json()
        if args.link_prediction or cfg["evaluation"].get("link_prediction"):
            row["lp_propagated_mlp"] = link_prediction_eval(x, graph, TaskEvalConfig.link_prediction(seeds=seeds)).to_json()
        results[strategy] = row
        print(f"{strategy}: NC(mlp)={row['nc_mlp']['mean']:.4f} NC(propagated)={row['nc_propagated_mlp']['mean']:.4f}")
    _write_json(out / "reports" / "impute.json", {"missing_nodes": int(missing.sum()), "results": results})


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="toporag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common], help="load, sample, split and clean the graph")

    p = sub.add_parser("embed", parents=[common], help="compute embeddings")
    p.add_argument("what", choices=sorted(KIND_FILES))

    p = sub.add_parser("correlate", parents=[common], help="text vs topology correlation report")
    p.add_argument("--kind", choices=["proximity", "role"])
    p.add_argument("--selection", choices=["all_unordered_no_self", "all_ordered", "sampled"])
    p.add_argument("--layer-sweep", type=int, metavar="K", help="correlation for diffusion depth 1..K")
    p.add_argument("--group-by", choices=["text", "topo"], default="text", help="score used for the label-group matrix")

    p = sub.add_parser("index", parents=[common], help="precompute the top-K retrieval index")
    p.add_argument("--kind", choices=["proximity", "role", "text"])
    p.add_argument("--k", type=int)

    p = sub.add_parser("generate", parents=[common], help="retrieve, prompt and generate")
    p.add_argument("--strategy", choices=["none", "random", "text", "topo"], default="topo")
    p.add_argument("--kind", choices=["proximity", "role", "text"], help="index used by the topo strategy")
    p.add_argument("--backend", help="'mock' or a generation endpoint URL")
    p.add_argument("--k", type=int, help="number of retrieved texts")
    p.add_argument("--rank-offset", type=int, help="start of the retrieved rank window")
    p.add_argument("--sample-size", type=int)
    p.add_argument("--starting-words-grid", help="comma-separated observed-word counts, e.g. 0,3,10")

    p = sub.add_parser("evaluate", parents=[common], help="score record stores")
    p.add_argument("--records", nargs="*", help="record stores (default: all under OUT/records)")

    p = sub.add_parser("impute", parents=[common], help="feature-imputation comparison")
    p.add_argument("--records", help="record store providing generated texts")
    p.add_argument("--link-prediction", action="store_true")
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "embed": cmd_embed,
    "correlate": cmd_correlate,
    "index": cmd_index,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "impute": cmd_impute,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides: dict = {}
    if args.out is not None:
        overrides["output_dir"] = str(args.out.resolve())
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        cfg = RunConfig.load(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except CommandError as exc:
        print(f"toporag {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (GraphFormatError, ConfigError, EigensolverCapError, ValueError, KeyError) as exc:
        print(f"toporag {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ProviderError) as exc:
        print(f"toporag {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
