"""Desk-scale synthetic corpora: separated embedding clusters plus templated queries."""
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from src.corpus.queries import QueryRecord
from src.store.embed_store import EmbeddingCorpus, ItemRecord, normalize, pool_frames
from src.utils.errors import InfeasibleSeparationError
from src.utils.log import get_logger

logger = get_logger(__name__)

ITEM_NOISE = 0.05
QUERY_NOISE = 0.05
MAX_COS = 0.5  # cluster mean directions at least 60 degrees apart

QUERY_TEMPLATES = (
    "a video about {topic} featuring {item}",
    "{item} in a {topic} clip",
    "show me {topic} footage with {item}",
    "clip of {item} from the {topic} collection",
    "{topic} scene where {item} appears",
    "find the {topic} video showing {item}",
    "watch {item} during a {topic} moment",
    "{item} {topic}",
)


@dataclass(frozen=True)
class SynthCorpus:
    corpus: EmbeddingCorpus
    queries: List[QueryRecord]
    query_embeddings: EmbeddingCorpus
    ground_truth: Dict[str, str]
    labels: Dict[str, int]


def cluster_directions(g: int, dim: int, rng: np.random.Generator, max_tries: int = 200) -> np.ndarray:
    """g unit vectors with pairwise cosine <= 0.5."""
    if g <= 2 * dim:
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        basis = q.T
        if g <= dim:
            return basis[:g].copy()
        return np.concatenate([basis, -basis])[:g].copy()
    chosen: List[np.ndarray] = []
    for _ in range(max_tries * g):
        cand = rng.normal(size=dim)
        cand /= np.linalg.norm(cand)
        if all(float(cand @ d) <= MAX_COS for d in chosen):
            chosen.append(cand)
            if len(chosen) == g:
                return np.stack(chosen)
    raise InfeasibleSeparationError(f"cannot place {g} cluster directions 60 degrees apart in {dim} dims")


def item_keyword(n: int) -> str:
    return f"obj{n}"


def topic_keyword(j: int) -> str:
    return f"topic{j}"


def synth_corpus(
    g: int,
    n_per: int,
    q_per: int,
    dim: int,
    seed: int = 0,
    n_frames: int = 0,
    first_item: int = 0,
    directions: Optional[np.ndarray] = None,
) -> SynthCorpus:
    """g well-separated Gaussian clusters of n_per items, q_per queries per item.

    The first query of each item is tagged "original", the rest "expansion".
    Queries name the item's cluster keyword and its own item keyword, and
    each gets an embedding near its item for stage-2 scoring.
    """
    if min(g, n_per, q_per, dim) < 1:
        raise ValueError("g, n_per, q_per and dim must all be >= 1")
    rng = np.random.default_rng(seed)
    means = cluster_directions(g, dim, rng) if directions is None else directions
    records: List[ItemRecord] = []
    queries: List[QueryRecord] = []
    query_records: List[ItemRecord] = []
    ground_truth: Dict[str, str] = {}
    labels: Dict[str, int] = {}

    n = first_item
    for j in range(g):
        for _ in range(n_per):
            item_id = f"v{n:06d}"
            if n_frames:
                frames = means[j] + rng.normal(0.0, ITEM_NOISE, size=(n_frames, dim))
                record = ItemRecord(item_id=item_id, rep=pool_frames(frames), frames=frames)
            else:
                record = ItemRecord(item_id=item_id, rep=normalize(means[j] + rng.normal(0.0, ITEM_NOISE, size=dim)))
            records.append(record)
            labels[item_id] = j
            for qi in range(q_per):
                template = QUERY_TEMPLATES[int(rng.integers(len(QUERY_TEMPLATES)))]
                query_id = f"{item_id}-q{qi:02d}"
                queries.append(QueryRecord(
                    item_id=item_id,
                    text=template.format(topic=topic_keyword(j), item=item_keyword(n)),
                    source="original" if qi == 0 else "expansion",
                    query_id=query_id,
                ))
                q_rep = normalize(record.rep + rng.normal(0.0, QUERY_NOISE, size=dim))
                query_records.append(ItemRecord(item_id=query_id, rep=q_rep))
                ground_truth[query_id] = item_id
            n += 1

    logger.info("Synthesized %d items in %d clusters with %d queries (dim %d)", len(records), g, len(queries), dim)
    return SynthCorpus(
        corpus=EmbeddingCorpus(dim=dim, records=tuple(records)),
        queries=queries,
        query_embeddings=EmbeddingCorpus(dim=dim, records=tuple(query_records)),
        ground_truth=ground_truth,
        labels=labels,
    )
