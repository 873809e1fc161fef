"""Two-stage retrieval: generative pre-select over SemIds, then similarity rerank.

Stage 1 tokenizes the query, decodes the top-k SemIds and expands them to
their item groups. Stage 2 scores only those candidates against the query
embedding. Stage timings cover the work of each stage and nothing else.
"""
import itertools
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from src.corpus.queries import DEFAULT_MAX_QUERY_LEN, QueryRecord, Vocab, tokenize
from src.decode.beam import SemIdRanking, beam_search, default_beam_width
from src.decode.trie import DecodingTrie, build_trie
from src.index.semtree import SemId, SemTree, insert_item, semid_groups, shape_hash
from src.model.checkpoint import CheckpointState
from src.model.pawa import PawaModel
from src.store.embed_store import EmbeddingCorpus, ItemRecord
from src.utils.errors import DimMismatchError, StateMismatchError, UnknownItemError
from src.utils.log import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class CandidateSet:
    semids: SemIdRanking
    items: List[str]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class RetrievalResult:
    ranked_items: List[Tuple[str, float]]
    stage1_time: float = 0.0
    stage2_time: float = 0.0
    candidates: Optional[CandidateSet] = None
    query_id: Optional[str] = None

    @property
    def total_time(self) -> float:
        return self.stage1_time + self.stage2_time

    @property
    def item_ids(self) -> List[str]:
        return [item_id for item_id, _ in self.ranked_items]

    def rank_of(self, item_id: str) -> Optional[int]:
        """1-based rank of item_id, or None when it was not retrieved."""
        for rank, (candidate, _) in enumerate(self.ranked_items, start=1):
            if candidate == item_id:
                return rank
        return None


# --- stage 2 rerankers ---

class Reranker(Protocol):
    def score(self, query_embedding: np.ndarray, item_ids: Sequence[str], corpus: EmbeddingCorpus) -> np.ndarray:
        ...


class CosineReranker:
    """Dot products of unit vectors, all candidates at once."""

    def score(self, query_embedding: np.ndarray, item_ids: Sequence[str], corpus: EmbeddingCorpus) -> np.ndarray:
        if not item_ids:
            return np.zeros(0, dtype=np.float64)
        q = np.asarray(query_embedding, dtype=np.float64)
        idx = [corpus.index_of[i] for i in item_ids]
        return np.sum(corpus.matrix[idx].astype(np.float64) * q, axis=1)


class PairwiseCosineReranker:
    """Scores one (query, item) pair per call, like a cross-encoder would."""

    def score(self, query_embedding: np.ndarray, item_ids: Sequence[str], corpus: EmbeddingCorpus) -> np.ndarray:
        q = np.asarray(query_embedding, dtype=np.float64)
        out = np.empty(len(item_ids), dtype=np.float64)
        for j, item_id in enumerate(item_ids):
            out[j] = np.sum(corpus.rep(item_id).astype(np.float64) * q)
        return out


RERANKERS = {"cosine": CosineReranker, "pairwise": PairwiseCosineReranker}


def make_reranker(name: str) -> Reranker:
    try:
        return RERANKERS[name]()
    except KeyError:
        raise ValueError(f"unknown reranker {name!r}; choose from {sorted(RERANKERS)}")


# --- stages ---

def preselect(
    model: PawaModel,
    trie: DecodingTrie,
    tree: SemTree,
    query_tokens: Sequence[int],
    top_k: int,
    m: int = 0,
    beam_width: Optional[int] = None,
    groups: Optional[Mapping[SemId, Sequence[str]]] = None,
) -> CandidateSet:
    """Decodes the top_k SemIds and expands them to items, rank-major then by item_id.

    Every item sits in exactly one group and decoded SemIds are distinct,
    so the expansion is a plain concatenation.
    """
    if trie.m != m:
        raise StateMismatchError(f"trie was built with m={trie.m}, pre-select asked for m={m}")
    if groups is None:
        groups = semid_groups(tree, m)
    ranking = beam_search(model, query_tokens, trie, beam_width, top_k)
    items = list(itertools.chain.from_iterable(groups.get(entry.semid, ()) for entry in ranking))
    return CandidateSet(semids=ranking, items=items)


def rerank(
    query_embedding: np.ndarray,
    candidates: CandidateSet,
    corpus: EmbeddingCorpus,
    reranker: Optional[Reranker] = None,
) -> RetrievalResult:
    """Scores candidates against the query; descending score, ties by item_id."""
    q = np.asarray(query_embedding)
    if q.ndim != 1 or q.shape[0] != corpus.dim:
        raise DimMismatchError(f"query embedding has shape {q.shape}, corpus dim is {corpus.dim}")
    reranker = reranker or CosineReranker()
    scores = reranker.score(q, candidates.items, corpus)
    ranked = sorted(zip(candidates.items, (float(s) for s in scores)), key=lambda p: (-p[1], p[0]))
    return RetrievalResult(ranked_items=ranked, candidates=candidates)


def brute_force(
    query_embedding: np.ndarray,
    corpus: EmbeddingCorpus,
    reranker: Optional[Reranker] = None,
) -> RetrievalResult:
    """Reranks the whole corpus: the linear-scan baseline."""
    everything = CandidateSet(semids=SemIdRanking(), items=list(corpus.ids))
    start = time.perf_counter()
    result = rerank(query_embedding, everything, corpus, reranker)
    result.stage2_time = time.perf_counter() - start
    result.candidates = None
    return result


# --- serving state ---

@dataclass
class RetrievalEngine:
    """Model, tree, trie and corpus bound together for serving.

    Stage timings exclude everything done here at construction time.
    """
    model: PawaModel
    vocab: Vocab
    tree: SemTree
    trie: DecodingTrie
    corpus: EmbeddingCorpus
    m: int = 0
    top_k: int = 11
    beam_width: Optional[int] = None
    reranker: Reranker = field(default_factory=CosineReranker)
    max_query_len: int = DEFAULT_MAX_QUERY_LEN
    model_shape_hash: Optional[str] = None

    def __post_init__(self):
        self.check_consistency()
        self.groups = self._frozen_groups()
        if self.model.training:
            self.model.eval()

    def check_consistency(self) -> None:
        tree_shape = shape_hash(self.tree)
        if self.trie.m != self.m:
            raise StateMismatchError(f"trie built with m={self.trie.m}, engine uses m={self.m}")
        if self.trie.shape_hash != tree_shape:
            raise StateMismatchError("trie was built from a different tree")
        if self.model_shape_hash is not None and self.model_shape_hash != tree_shape:
            raise StateMismatchError("model was trained against a different tree")
        if self.trie.end_token != self.model.config.end_token:
            raise StateMismatchError(f"tree k={self.trie.end_token} but model k={self.model.config.k}")
        deepest = max(len(s) for s in self.trie.terminals())
        if deepest > self.model.config.max_semid_len:
            raise StateMismatchError(
                f"trie paths need {deepest} decoding steps, model has {self.model.config.max_semid_len}"
            )
        missing = [i for i in self.tree.leaf_of if i not in self.corpus.index_of]
        if missing:
            raise StateMismatchError(f"{len(missing)} indexed items have no embedding, e.g. {missing[0]!r}")

    def _frozen_groups(self) -> Dict[SemId, Tuple[str, ...]]:
        return {semid: tuple(members) for semid, members in semid_groups(self.tree, self.m).items()}

    @classmethod
    def from_checkpoint(cls, state: CheckpointState, tree: SemTree, corpus: EmbeddingCorpus, **kwargs) -> "RetrievalEngine":
        return cls(
            model=state.model,
            vocab=state.vocab,
            tree=tree,
            trie=build_trie(tree, state.m),
            corpus=corpus,
            m=state.m,
            max_query_len=state.model.config.max_query_len,
            model_shape_hash=state.shape_hash,
            **kwargs,
        )

    def insert(self, records: Iterable[ItemRecord]) -> List[SemId]:
        """Adds unseen items to their nearest leaves; the model is not retrained."""
        records = list(records)
        semids = [insert_item(self.tree, rec, self.m) for rec in records]
        self.corpus = self.corpus.extended(records)
        self.groups = self._frozen_groups()
        return semids

    def preselect(self, text: str, top_k: Optional[int] = None) -> CandidateSet:
        top_k = self.top_k if top_k is None else top_k
        if top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {top_k}")
        tokens = tokenize(text, self.vocab, self.max_query_len)
        width = default_beam_width(top_k) if self.beam_width is None else max(self.beam_width, top_k)
        return preselect(self.model, self.trie, self.tree, tokens, top_k, self.m, width, self.groups)

    def retrieve(
        self,
        text: str,
        query_embedding: np.ndarray,
        top_k: Optional[int] = None,
        m: Optional[int] = None,
        query_id: Optional[str] = None,
    ) -> RetrievalResult:
        if m is not None and m != self.m:
            raise StateMismatchError(f"engine serves m={self.m}, request asked for m={m}")
        start = time.perf_counter()
        candidates = self.preselect(text, top_k)
        stage1 = time.perf_counter() - start
        start = time.perf_counter()
        result = rerank(query_embedding, candidates, self.corpus, self.reranker)
        result.stage2_time = time.perf_counter() - start
        result.stage1_time = stage1
        result.query_id = query_id
        return result


def run_queries(
    engine: RetrievalEngine,
    queries: Sequence[QueryRecord],
    query_embeddings: EmbeddingCorpus,
    top_k: Optional[int] = None,
) -> Dict[str, RetrievalResult]:
    """Retrieves queries one at a time, keyed by query_id."""
    results: Dict[str, RetrievalResult] = {}
    for q in queries:
        if q.query_id not in query_embeddings.index_of:
            raise UnknownItemError(f"no embedding for query {q.query_id!r}")
        results[q.query_id] = engine.retrieve(q.text, query_embeddings.rep(q.query_id), top_k, query_id=q.query_id)
    return results
