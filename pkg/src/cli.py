"""Command-line entry points. Library errors end the process with exit code 1."""
import argparse
import os
import sys
import time
from typing import Callable, Dict, List, Optional

from src.corpus.queries import (
    SOURCE_FILTERS,
    Vocab,
    build_training_pairs,
    filter_queries,
    load_queries,
    save_queries,
    tokenize,
)
from src.corpus.synth import synth_corpus
from src.decode.beam import beam_search
from src.decode.trie import build_trie
from src.index.semtree import (
    assign_semid,
    build_flat_tree,
    build_tree,
    insert_item,
    load_tree,
    save_tree,
    shape_hash,
    tree_stats,
)
from src.model.checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from src.model.trainer import TrainConfig, model_config_for, train
from src.orchestrator.graph import build_index_graph, save_outputs
from src.orchestrator.graph_state import initial_state
from src.pipeline.bench import bench_scaling, synth_bench_setup
from src.pipeline.metrics import eval_recall, recall_table
from src.pipeline.retriever import RetrievalEngine, brute_force, make_reranker, run_queries
from src.pipeline.sweep import run_sweep
from src.store.embed_store import guess_format, load_corpus, save_corpus
from src.utils.config import AppConfig, load_config
from src.utils.errors import ConfigError, SemIndexError
from src.utils.log import get_logger, setup_logging
from src.utils.seeding import set_seeds

logger = get_logger(__name__)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _corpus(path: str):
    return load_corpus(path, guess_format(path))


def cmd_synth(args: argparse.Namespace, config: AppConfig) -> int:
    s = config.synth
    data = synth_corpus(
        args.clusters or s.clusters, args.items or s.items_per_cluster, args.queries or s.queries_per_item,
        args.dim or s.dim, seed=s.seed if args.seed is None else args.seed, n_frames=s.n_frames,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    save_corpus(data.corpus, os.path.join(args.out_dir, "items.sgix"))
    save_corpus(data.query_embeddings, os.path.join(args.out_dir, "query_embeddings.sgix"))
    save_queries(data.queries, os.path.join(args.out_dir, "queries.jsonl"))
    print(f"Wrote {len(data.corpus)} items and {len(data.queries)} queries to {args.out_dir}")
    return 0


def cmd_build_tree(args: argparse.Namespace, config: AppConfig) -> int:
    corpus = _corpus(args.corpus)
    seed = config.index.seed if args.seed is None else args.seed
    flat = args.flat or config.index.flat_clusters
    if flat:
        tree = build_flat_tree(corpus, flat, seed=seed)
    else:
        tree = build_tree(corpus, args.k or config.index.k, args.c or config.index.c, seed=seed)
    save_tree(tree, args.out)
    print(tree_stats(tree))
    return 0


def cmd_assign_ids(args: argparse.Namespace, config: AppConfig) -> int:
    tree = load_tree(args.tree)
    m = config.index.m if args.m is None else args.m
    for item_id in sorted(tree.leaf_of):
        print(f"{item_id}\t{assign_semid(tree, item_id, m)}")
    return 0


def cmd_insert(args: argparse.Namespace, config: AppConfig) -> int:
    tree = load_tree(args.tree)
    new_items = _corpus(args.corpus)
    m = config.index.m if args.m is None else args.m
    start = time.perf_counter()
    semids = [insert_item(tree, rec, m) for rec in new_items]
    elapsed = time.perf_counter() - start
    save_tree(tree, args.out or args.tree)
    for rec, semid in zip(new_items, semids):
        print(f"{rec.item_id}\t{semid}")
    if semids:
        print(f"Inserted {len(semids)} items, {1000.0 * elapsed / len(semids):.3f} ms per item")
    return 0


def cmd_train(args: argparse.Namespace, config: AppConfig) -> int:
    tree = load_tree(args.tree)
    source = args.queries or config.corpus.queries
    queries = filter_queries(load_queries(args.pairs), source)
    m = config.index.m if args.m is None else args.m
    seed = config.train.seed if args.seed is None else args.seed
    set_seeds(seed, config.system.num_threads)
    vocab = Vocab.build(q.text for q in queries)
    pairs = build_training_pairs(tree, queries, vocab, m, config.corpus.max_query_len).pairs
    print(f"Built {len(pairs)} training pairs from {source} queries")
    model_config = model_config_for(tree, m, len(vocab), config.corpus.max_query_len, **config.model.model_dump())
    updates = {"seed": seed}
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    train_config = TrainConfig(**config.train.model_dump()).model_copy(update=updates)
    result = train(pairs, model_config, train_config)
    save_checkpoint(
        CheckpointState(model=result.model, vocab=vocab, m=m, shape_hash=shape_hash(tree), seed=seed,
                        history=result.history),
        args.out,
    )
    if result.history:
        print(f"Trained {len(result.history)} epochs, final loss {result.history[-1]:.4f}")
    return 0


def cmd_decode(args: argparse.Namespace, config: AppConfig) -> int:
    ckpt = load_checkpoint(args.ckpt)
    tree = load_tree(args.tree)
    m = ckpt.m if args.m is None else args.m
    top_k = config.decode.top_k if args.topk is None else args.topk
    trie = build_trie(tree, m)
    tokens = tokenize(args.query, ckpt.vocab, ckpt.model.config.max_query_len)
    ranking = beam_search(ckpt.model, tokens, trie, config.decode.resolved_beam_width(top_k), top_k)
    for entry in ranking:
        print(entry.render())
    return 0


def _engine(args: argparse.Namespace, config: AppConfig) -> RetrievalEngine:
    ckpt = load_checkpoint(args.ckpt)
    return RetrievalEngine.from_checkpoint(
        ckpt, load_tree(args.tree), _corpus(args.corpus),
        top_k=config.decode.top_k if args.topk is None else args.topk,
        beam_width=config.decode.beam_width,
        reranker=make_reranker(args.reranker),
    )


def cmd_retrieve(args: argparse.Namespace, config: AppConfig) -> int:
    engine = _engine(args, config)
    query_embeddings = _corpus(args.query_embeddings)
    result = engine.retrieve(args.query, query_embeddings.rep(args.query_id), query_id=args.query_id)
    for rank, (item_id, score) in enumerate(result.ranked_items[: args.show], start=1):
        print(f"{rank}\t{item_id}\t{score:.6f}")
    print(f"stage1 {1000 * result.stage1_time:.2f} ms, stage2 {1000 * result.stage2_time:.2f} ms, "
          f"{len(result.candidates)} candidates")
    return 0


def _eval_sweep(args: argparse.Namespace, config: AppConfig, eval_queries, query_embeddings, ground_truth) -> None:
    if not args.train_queries:
        raise ConfigError("eval --sweep needs --train-queries")
    train_queries = filter_queries(load_queries(args.train_queries), config.corpus.queries)
    train_config = TrainConfig(**config.train.model_dump())
    if config.eval.sweep_epochs is not None:
        train_config = train_config.model_copy(update={"epochs": config.eval.sweep_epochs})
    df = run_sweep(
        load_tree(args.tree), _corpus(args.corpus), train_queries, eval_queries, query_embeddings, ground_truth,
        Vocab.build(q.text for q in train_queries), train_config,
        ms=config.eval.sweep_ms, max_top_k=config.eval.sweep_top_k, ks=config.eval.ks,
        max_query_len=config.corpus.max_query_len, reranker=make_reranker(args.reranker),
        **config.model.model_dump(),
    )
    print(df.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    os.makedirs(config.paths.reports, exist_ok=True)
    out = os.path.join(config.paths.reports, "sweep.csv")
    df.to_csv(out, index=False)
    logger.info("Sweep table saved to %s", out)


def cmd_eval(args: argparse.Namespace, config: AppConfig) -> int:
    engine = _engine(args, config)
    query_embeddings = _corpus(args.query_embeddings)
    queries = load_queries(args.queries)
    if config.eval.max_queries:
        queries = queries[: config.eval.max_queries]
    ground_truth = {q.query_id: q.item_id for q in queries}
    reports = {"two-stage": eval_recall(run_queries(engine, queries, query_embeddings), ground_truth, config.eval.ks)}
    if args.brute_force:
        brute = {q.query_id: brute_force(query_embeddings.rep(q.query_id), engine.corpus, engine.reranker)
                 for q in queries}
        reports["brute force"] = eval_recall(brute, ground_truth, config.eval.ks)
    print(recall_table(reports))
    if args.report:
        with open(args.report, "w") as f:
            f.write(reports["two-stage"].model_dump_json(indent=2))
    if args.sweep:
        _eval_sweep(args, config, queries, query_embeddings, ground_truth)
    return 0


def cmd_bench(args: argparse.Namespace, config: AppConfig) -> int:
    bench = config.bench
    if args.sizes:
        bench = bench.model_copy(update={"sizes": args.sizes})
    setup = synth_bench_setup(bench, seed=config.system.random_seed)
    df = bench_scaling(setup.engine, bench.sizes, setup.queries, setup.extra_items, bench.n_queries, bench.warmup)
    print(df.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    os.makedirs(config.paths.reports, exist_ok=True)
    out = os.path.join(config.paths.reports, "bench_scaling.csv")
    df.to_csv(out, index=False)
    logger.info("Benchmark table saved to %s", out)
    return 0


def cmd_run(args: argparse.Namespace, config: AppConfig) -> int:
    set_seeds(config.system.random_seed, config.system.num_threads)
    if args.sweep:
        config = config.model_copy(update={"eval": config.eval.model_copy(update={"sweep": True})})
    if args.queries:
        config = config.model_copy(update={"corpus": config.corpus.model_copy(update={"queries": args.queries})})
    app = build_index_graph(config)
    logger.info("---  EXECUTING INDEX GRAPH ---")
    final_state = app.invoke(initial_state())
    save_outputs(final_state, config)
    if final_state["recall_table"]:
        print(final_state["recall_table"])
    return 1 if final_state["error"] else 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, AppConfig], int]] = {
    "synth": cmd_synth,
    "build-tree": cmd_build_tree,
    "assign-ids": cmd_assign_ids,
    "insert": cmd_insert,
    "train": cmd_train,
    "decode": cmd_decode,
    "retrieve": cmd_retrieve,
    "eval": cmd_eval,
    "bench-scaling": cmd_bench,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semindex", description="Generative semantic index")
    parser.add_argument("--config", default=None, help="config file (default: $SEMINDEX_CONFIG or config/config.yaml)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus, queries and query embeddings")
    p.add_argument("--out-dir", default="data/synth")
    p.add_argument("--clusters", type=int)
    p.add_argument("--items", type=int, help="items per cluster")
    p.add_argument("--queries", type=int, help="queries per item")
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("build-tree", help="cluster a corpus into a semantic tree")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--flat", type=int, help="build a single-level tree of this many clusters")

    p = sub.add_parser("assign-ids", help="print every item's SemId")
    p.add_argument("--tree", required=True)
    p.add_argument("--m", type=int)

    p = sub.add_parser("insert", help="add unseen items to their nearest leaves")
    p.add_argument("--tree", required=True)
    p.add_argument("--corpus", required=True, help="items to insert")
    p.add_argument("--m", type=int)
    p.add_argument("--out", help="output tree (default: overwrite --tree)")

    p = sub.add_parser("train", help="train the SemId generator")
    p.add_argument("--pairs", required=True, help="query file (JSON lines)")
    p.add_argument("--queries", choices=SOURCE_FILTERS, help="query sources to train on (default: corpus.queries)")
    p.add_argument("--tree", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("decode", help="print the top-k SemIds for a query")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--topk", type=_positive_int)
    p.add_argument("--query", required=True)

    for name, help_text in (("retrieve", "two-stage retrieval for one query"), ("eval", "R@K over a query file")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--tree", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--query-embeddings", required=True)
        p.add_argument("--topk", type=_positive_int)
        p.add_argument("--reranker", choices=["cosine", "pairwise"], default="cosine")
        if name == "retrieve":
            p.add_argument("--query", required=True)
            p.add_argument("--query-id", required=True)
            p.add_argument("--show", type=int, default=10)
        else:
            p.add_argument("--queries", required=True)
            p.add_argument("--report", help="write the EvalReport JSON here")
            p.add_argument("--brute-force", action="store_true", help="also score brute force over the corpus")
            p.add_argument("--sweep", action="store_true", help="also run the m x top_k sweep")
            p.add_argument("--train-queries", help="query file the sweep trains on")

    p = sub.add_parser("bench-scaling", help="stage-1/stage-2/brute-force latency across corpus sizes")
    p.add_argument("--sizes", type=int, nargs="+")

    p = sub.add_parser("run", help="end-to-end graph: data, tree, training, evaluation")
    p.add_argument("--sweep", action="store_true", help="also run the m x top_k sweep")
    p.add_argument("--queries", choices=SOURCE_FILTERS, help="query sources to train on (default: corpus.queries)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        setup_logging(config.system.log_level)
        return COMMANDS[args.command](args, config)
    except SemIndexError as e:
        setup_logging()
        logger.error("%s: %s", type(e).__name__, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
