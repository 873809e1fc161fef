import numpy as np
import pytest

from conftest import random_model, unit_corpus
from src.corpus.queries import QueryRecord, Vocab
from src.decode.beam import SemIdRanking
from src.decode.trie import build_trie
from src.index.semtree import build_tree, semid_groups, shape_hash
from src.model.trainer import model_config_for
from src.pipeline.metrics import eval_recall
from src.pipeline.retriever import (
    CandidateSet,
    CosineReranker,
    PairwiseCosineReranker,
    RetrievalEngine,
    brute_force,
    make_reranker,
    rerank,
    run_queries,
)
from src.store.embed_store import EmbeddingCorpus, ItemRecord, normalize
from src.utils.config import DecodeConfig
from src.utils.errors import ConfigError, DimMismatchError, StateMismatchError, UnknownItemError

DIMS = dict(hidden=8, layers=1, heads=2, ffn_dim=16, adaptor_hidden=4, dropout=0.0)


def _engine(corpus, queries, k=4, c=10, m=0, seed=0, **kwargs):
    tree = build_tree(corpus, k=k, c=c, seed=0)
    vocab = Vocab.build(q.text for q in queries)
    config = model_config_for(tree, m, vocab_size=len(vocab), max_query_len=16, **DIMS)
    return RetrievalEngine(
        model=random_model(config, seed=seed), vocab=vocab, tree=tree, trie=build_trie(tree, m),
        corpus=corpus, m=m, max_query_len=16, **kwargs,
    )


def test_single_leaf_tree_equals_brute_force(small_corpus, rng):
    queries = [QueryRecord(item_id=small_corpus.ids[0], text="anything at all")]
    engine = _engine(small_corpus, queries, k=4, c=1000, top_k=3)
    for _ in range(5):
        q = normalize(rng.normal(size=8))
        two_stage = engine.retrieve("anything", q)
        assert two_stage.ranked_items == brute_force(q, small_corpus).ranked_items
        assert len(two_stage.candidates) == len(small_corpus)


def test_candidates_are_union_of_decoded_groups(clustered):
    engine = _engine(clustered.corpus, clustered.queries, top_k=2)
    groups = semid_groups(engine.tree)
    for q in clustered.queries[:10]:
        result = engine.retrieve(q.text, clustered.query_embeddings.rep(q.query_id), query_id=q.query_id)
        decoded = result.candidates.semids.semids()
        expected = {i for s in decoded for i in groups[s]}
        assert len(decoded) == 2
        assert set(result.item_ids) == expected
        assert result.candidates.items == [i for s in decoded for i in groups[s]]
        assert len(result.ranked_items) == len(result.candidates)
        assert result.query_id == q.query_id
        assert result.stage1_time > 0 and result.stage2_time >= 0
        assert result.total_time == result.stage1_time + result.stage2_time


def test_rerank_orders_by_score_then_id():
    corpus = EmbeddingCorpus(dim=2, records=(
        ItemRecord.from_vector("b", [1.0, 0.0]),
        ItemRecord.from_vector("a", [1.0, 0.0]),
        ItemRecord.from_vector("c", [0.0, 1.0]),
        ItemRecord.from_vector("d", [0.6, 0.8]),
    ))
    candidates = CandidateSet(semids=SemIdRanking(), items=["c", "b", "d", "a"])
    result = rerank(np.array([1.0, 0.0]), candidates, corpus)
    assert result.item_ids == ["a", "b", "d", "c"]
    assert result.rank_of("d") == 3 and result.rank_of("zzz") is None
    assert rerank(np.array([1.0, 0.0]), CandidateSet(SemIdRanking(), []), corpus).ranked_items == []
    with pytest.raises(DimMismatchError):
        rerank(np.array([1.0, 0.0, 0.0]), candidates, corpus)


def test_pairwise_and_batched_scores_agree(rng):
    corpus = unit_corpus(40, 12, seed=5)
    q = normalize(rng.normal(size=12))
    a = brute_force(q, corpus, CosineReranker())
    b = brute_force(q, corpus, PairwiseCosineReranker())
    assert a.ranked_items == b.ranked_items
    assert a.candidates is None and a.stage1_time == 0.0
    assert isinstance(make_reranker("pairwise"), PairwiseCosineReranker)
    with pytest.raises(ValueError):
        make_reranker("colbert")


def test_state_mismatches(clustered):
    engine = _engine(clustered.corpus, clustered.queries)
    with pytest.raises(StateMismatchError):
        engine.retrieve("x", clustered.query_embeddings.records[0].rep, m=1)
    with pytest.raises(StateMismatchError):
        RetrievalEngine(model=engine.model, vocab=engine.vocab, tree=engine.tree, trie=build_trie(engine.tree, 1),
                        corpus=engine.corpus, m=0)
    with pytest.raises(StateMismatchError):
        RetrievalEngine(model=engine.model, vocab=engine.vocab, tree=engine.tree, trie=engine.trie,
                        corpus=engine.corpus, model_shape_hash="not-this-tree")
    with pytest.raises(StateMismatchError):
        RetrievalEngine(model=engine.model, vocab=engine.vocab, tree=engine.tree, trie=engine.trie,
                        corpus=engine.corpus.subset(engine.corpus.ids[1:]))
    other = build_tree(clustered.corpus, k=3, c=10, seed=0)
    with pytest.raises(StateMismatchError):
        RetrievalEngine(model=engine.model, vocab=engine.vocab, tree=other, trie=build_trie(other),
                        corpus=engine.corpus)


def test_insert_keeps_serving_state_consistent(clustered):
    engine = _engine(clustered.corpus, clustered.queries)
    engine.top_k = len(engine.trie)
    before = shape_hash(engine.tree)
    leaf = engine.tree.leaves()[0]
    rec = ItemRecord.from_vector("fresh", engine.tree.nodes[leaf].centroid)
    [semid] = engine.insert([rec])
    assert shape_hash(engine.tree) == before
    engine.check_consistency()
    assert "fresh" in engine.groups[semid]
    assert all(isinstance(members, tuple) for members in engine.groups.values())
    assert "fresh" in engine.corpus.index_of
    # every leaf is decoded when top_k covers the trie
    result = engine.retrieve("anything", rec.rep)
    assert result.item_ids[0] == "fresh"


def test_run_queries(clustered):
    engine = _engine(clustered.corpus, clustered.queries, top_k=2)
    some = clustered.queries[:4]
    results = run_queries(engine, some, clustered.query_embeddings)
    assert list(results) == [q.query_id for q in some]
    with pytest.raises(UnknownItemError):
        run_queries(engine, [QueryRecord(item_id="v000000", text="x", query_id="nope")], clustered.query_embeddings)


@pytest.mark.parametrize("seed", range(20))
def test_covering_top_k_matches_brute_force_recall(clustered, seed):
    engine = _engine(clustered.corpus, clustered.queries, seed=seed)
    engine.top_k = len(engine.trie)
    rng = np.random.default_rng(seed)
    picked = [clustered.queries[int(i)] for i in rng.choice(len(clustered.queries), size=8, replace=False)]
    two_stage = run_queries(engine, picked, clustered.query_embeddings)
    brute = {q.query_id: brute_force(clustered.query_embeddings.rep(q.query_id), clustered.corpus) for q in picked}
    for q in picked:
        assert two_stage[q.query_id].ranked_items == brute[q.query_id].ranked_items
    two_stage_report = eval_recall(two_stage, clustered.ground_truth, (1, 5, 10))
    brute_report = eval_recall(brute, clustered.ground_truth, (1, 5, 10))
    assert two_stage_report.recall_at == brute_report.recall_at
    assert two_stage_report.recall_sum == brute_report.recall_sum
    assert two_stage_report.stage1_hit_rate == 100.0


def test_top_k_zero_is_rejected(clustered):
    engine = _engine(clustered.corpus, clustered.queries, top_k=2)
    with pytest.raises(ValueError):
        engine.retrieve("x", clustered.query_embeddings.records[0].rep, top_k=0)
    with pytest.raises(ConfigError):
        DecodeConfig(top_k=3).resolved_beam_width(0)
    assert DecodeConfig(top_k=3).resolved_beam_width() == 6
    assert DecodeConfig(top_k=3, beam_width=2).resolved_beam_width(5) == 5
