from typing import Any, Dict, List, Optional, TypedDict

from src.corpus.queries import QueryRecord, TrainingPair, Vocab
from src.index.semtree import SemTree
from src.model.checkpoint import CheckpointState
from src.store.embed_store import EmbeddingCorpus


class RunState(TypedDict):
    """
    Defines the state that flows through the end-to-end indexing graph.
    """
    # Item gallery and the text queries bound to it
    corpus: Optional[EmbeddingCorpus]
    train_queries: List[QueryRecord]
    eval_queries: List[QueryRecord]

    # Stage-2 embeddings keyed by query_id, and query_id -> item_id
    query_embeddings: Optional[EmbeddingCorpus]
    ground_truth: Dict[str, str]

    # Offline index artifacts
    tree: Optional[SemTree]
    tree_stats: Dict[str, Any]
    vocab: Optional[Vocab]
    pairs: List[TrainingPair]
    checkpoint: Optional[CheckpointState]

    # Evaluation outputs, JSON-ready
    # Format: {"two-stage (held-out)": {...EvalReport fields...}, ...}
    eval_reports: Dict[str, Dict[str, Any]]
    recall_table: Optional[str]
    sweep: List[Dict[str, Any]]

    # First failure, if any; later nodes skip their work
    error: Optional[str]
    log: List[str]


# fields too bulky (or not JSON) for logs/run_log.json
BULKY_FIELDS = ("corpus", "train_queries", "eval_queries", "query_embeddings", "ground_truth",
                "tree", "vocab", "pairs", "checkpoint")


def initial_state() -> RunState:
    return RunState(
        corpus=None,
        train_queries=[],
        eval_queries=[],
        query_embeddings=None,
        ground_truth={},
        tree=None,
        tree_stats={},
        vocab=None,
        pairs=[],
        checkpoint=None,
        eval_reports={},
        recall_table=None,
        sweep=[],
        error=None,
        log=[],
    )
