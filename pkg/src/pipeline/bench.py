"""Latency scaling: two-stage retrieval against a brute-force rerank as the corpus grows.

The tree shape and the model stay fixed; larger corpora are reached by
inserting new items into existing leaves, as happens when new items
arrive after training.
"""
import math
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from src.corpus.queries import Vocab, build_training_pairs
from src.corpus.synth import cluster_directions, synth_corpus
from src.decode.trie import build_trie
from src.index.semtree import build_tree, shape_hash
from src.model.trainer import TrainConfig, model_config_for, train
from src.pipeline.retriever import RetrievalEngine, brute_force, make_reranker
from src.store.embed_store import ItemRecord
from src.utils.config import BenchConfig
from src.utils.log import get_logger

logger = get_logger(__name__)

BenchQuery = Tuple[str, np.ndarray]


@dataclass
class BenchSetup:
    engine: RetrievalEngine
    queries: List[BenchQuery]
    extra_items: List[ItemRecord]


def _round_robin(records: Sequence[ItemRecord], labels: Dict[str, int]) -> List[ItemRecord]:
    """Interleaves records across clusters so any prefix grows every cluster evenly."""
    by_cluster: Dict[int, List[ItemRecord]] = {}
    for rec in records:
        by_cluster.setdefault(labels[rec.item_id], []).append(rec)
    out: List[ItemRecord] = []
    queues = [by_cluster[j] for j in sorted(by_cluster)]
    for i in range(max((len(q) for q in queues), default=0)):
        out.extend(q[i] for q in queues if i < len(q))
    return out


def synth_bench_setup(config: BenchConfig, seed: int = 0, queries_per_item: int = 2) -> BenchSetup:
    """Trains a small engine on sizes[0] synthetic items and synthesizes the items to add later."""
    sizes = sorted(config.sizes)
    g = config.clusters
    directions = cluster_directions(g, config.dim, np.random.default_rng(seed))
    base = synth_corpus(g, math.ceil(sizes[0] / g), queries_per_item, config.dim, seed=seed, directions=directions)
    base_items = _round_robin(base.corpus.records, base.labels)[: sizes[0]]
    kept = {rec.item_id for rec in base_items}
    corpus = base.corpus.subset(sorted(kept))
    queries = [q for q in base.queries if q.item_id in kept]

    tree = build_tree(corpus, config.k, config.c, seed=seed)
    vocab = Vocab.build(q.text for q in queries)
    pairs = build_training_pairs(tree, queries, vocab, 0).pairs
    model_config = model_config_for(tree, 0, len(vocab))
    model = train(pairs, model_config, TrainConfig(epochs=config.epochs, seed=seed, lr_encoder=1e-3, lr_decoder=1e-3)).model
    engine = RetrievalEngine(
        model=model,
        vocab=vocab,
        tree=tree,
        trie=build_trie(tree, 0),
        corpus=corpus,
        m=0,
        top_k=config.top_k,
        reranker=make_reranker(config.reranker),
        model_shape_hash=shape_hash(tree),
    )

    extra: List[ItemRecord] = []
    growth = sizes[-1] - sizes[0]
    if growth > 0:
        more = synth_corpus(
            g, math.ceil(growth / g), 1, config.dim, seed=seed + 1,
            first_item=len(base.corpus), directions=directions,
        )
        extra = _round_robin(more.corpus.records, more.labels)[:growth]

    bench_queries = [(q.text, base.query_embeddings.rep(q.query_id)) for q in queries]
    return BenchSetup(engine=engine, queries=bench_queries, extra_items=extra)


def bench_scaling(
    engine: RetrievalEngine,
    sizes: Sequence[int],
    queries: Sequence[BenchQuery],
    extra_items: Sequence[ItemRecord],
    n_queries: int = 100,
    warmup: int = 10,
) -> pd.DataFrame:
    """Mean per-query stage-1, stage-2 and brute-force times (ms) at every corpus size."""
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    if not queries:
        raise ValueError("bench_scaling needs at least one query")
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    engine = replace(engine, tree=engine.tree.clone())
    pool = list(extra_items)
    rows = []
    try:
        for size in sizes:
            need = size - len(engine.corpus)
            if need > len(pool):
                raise ValueError(f"not enough extra items to reach {size}")
            if need > 0:
                start = time.perf_counter()
                engine.insert(pool[:need])
                insert_ms = 1000.0 * (time.perf_counter() - start) / need
                pool = pool[need:]
            else:
                insert_ms = 0.0
            batch = [queries[i % len(queries)] for i in range(warmup + n_queries)]
            # each method gets its own warmup and timed pass
            for text, emb in batch[:warmup]:
                engine.retrieve(text, emb)
            stage1, stage2, cand = [], [], []
            for text, emb in batch[warmup:]:
                res = engine.retrieve(text, emb)
                stage1.append(res.stage1_time)
                stage2.append(res.stage2_time)
                cand.append(len(res.candidates))
            for _, emb in batch[:warmup]:
                brute_force(emb, engine.corpus, engine.reranker)
            brute = [brute_force(emb, engine.corpus, engine.reranker).stage2_time for _, emb in batch[warmup:]]
            row = {
                "size": len(engine.corpus),
                "stage1_ms": 1000.0 * float(np.mean(stage1)),
                "stage2_ms": 1000.0 * float(np.mean(stage2)),
                "two_stage_ms": 1000.0 * float(np.mean(stage1) + np.mean(stage2)),
                "brute_force_ms": 1000.0 * float(np.mean(brute)),
                "candidates_mean": float(np.mean(cand)),
                "insert_ms_per_item": insert_ms,
            }
            logger.info("Bench size %d: stage1 %.2f ms, stage2 %.2f ms, brute force %.2f ms",
                        row["size"], row["stage1_ms"], row["stage2_ms"], row["brute_force_ms"])
            rows.append(row)
    finally:
        torch.set_num_threads(threads)
    return pd.DataFrame(rows)
