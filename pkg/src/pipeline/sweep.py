"""Truncation depth (m) x top_k parameter sweep."""
from typing import Any, Dict, List, Mapping, Optional, Sequence

import pandas as pd

from src.corpus.queries import QueryRecord, Vocab, build_training_pairs, tokenize
from src.decode.beam import beam_search
from src.decode.trie import build_trie
from src.index.semtree import SemTree, semid_groups
from src.model.trainer import TrainConfig, model_config_for, train
from src.pipeline.metrics import DEFAULT_KS, eval_recall
from src.pipeline.retriever import CandidateSet, Reranker, RetrievalResult, rerank
from src.store.embed_store import EmbeddingCorpus
from src.utils.errors import TruncationTooDeepError
from src.utils.log import get_logger

logger = get_logger(__name__)


def run_sweep(
    tree: SemTree,
    corpus: EmbeddingCorpus,
    train_queries: Sequence[QueryRecord],
    eval_queries: Sequence[QueryRecord],
    query_embeddings: EmbeddingCorpus,
    ground_truth: Mapping[str, str],
    vocab: Vocab,
    train_config: TrainConfig,
    ms: Sequence[int] = (0, 1, 2),
    max_top_k: int = 15,
    ks: Sequence[int] = DEFAULT_KS,
    max_query_len: int = 64,
    reranker: Optional[Reranker] = None,
    **model_dims: Any,
) -> pd.DataFrame:
    """One trained model per feasible m; each query is decoded once at max_top_k.

    Smaller top_k values read a prefix of that ranking, so candidate sets
    and stage-1 hit rates are non-decreasing in top_k.
    """
    rows: List[Dict[str, Any]] = []
    for m in ms:
        try:
            groups = semid_groups(tree, m)
        except TruncationTooDeepError:
            logger.warning("Sweep: m=%d is deeper than the shallowest leaf; skipped", m)
            continue
        pairs = build_training_pairs(tree, train_queries, vocab, m, max_query_len).pairs
        config = model_config_for(tree, m, len(vocab), max_query_len, **model_dims)
        model = train(pairs, config, train_config).model
        trie = build_trie(tree, m)
        width = 2 * max_top_k

        rankings = {
            q.query_id: beam_search(model, tokenize(q.text, vocab, max_query_len), trie, width, max_top_k)
            for q in eval_queries
        }
        for top_k in range(1, max_top_k + 1):
            results: Dict[str, RetrievalResult] = {}
            for q in eval_queries:
                head = rankings[q.query_id].head(top_k)
                items = [item for entry in head for item in groups[entry.semid]]
                candidates = CandidateSet(semids=head, items=items)
                results[q.query_id] = rerank(query_embeddings.rep(q.query_id), candidates, corpus, reranker)
            report = eval_recall(results, ground_truth, ks)
            rows.append({
                "m": m,
                "top_k": top_k,
                "identifiers": len(groups),
                "stage1_hit_rate": report.stage1_hit_rate,
                **report.row(),
                "candidates_mean": report.candidates_mean,
            })
        logger.info("Sweep: m=%d done (%d identifiers)", m, len(groups))
    return pd.DataFrame(rows)
