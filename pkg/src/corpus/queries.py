"""Query text handling: tokenizer, vocabulary, query files and training pairs."""
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union, get_args

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.index.semtree import SemId, SemTree, assign_semid
from src.utils.errors import IoFailureError, NoValidPairsError, ParseError
from src.utils.log import get_logger

logger = get_logger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
DEFAULT_MAX_QUERY_LEN = 64

QuerySource = Literal["original", "expansion"]
SourceFilter = Literal["original", "expansion", "all"]
SOURCE_FILTERS: Tuple[str, ...] = get_args(SourceFilter)

_WORD = re.compile(r"\w+")


def split_words(text: str) -> List[str]:
    """Lowercased word tokens; whitespace and punctuation are boundaries."""
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class Vocab:
    """Word -> id map with 0 reserved for padding and 1 for unknown words."""
    tokens: Tuple[str, ...]

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if tokens[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise ValueError("vocab must start with the padding and unknown tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab tokens must be unique")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 1) -> "Vocab":
        """Words in order of first appearance, kept when seen at least min_freq times."""
        counts: Counter = Counter()
        order: List[str] = []
        for text in texts:
            for word in split_words(text):
                if word not in counts:
                    order.append(word)
                counts[word] += 1
        kept = [w for w in order if counts[w] >= min_freq and w not in (PAD_TOKEN, UNK_TOKEN)]
        return cls((PAD_TOKEN, UNK_TOKEN, *kept))

    @classmethod
    def from_mapping(cls, mapping: Dict[str, int]) -> "Vocab":
        """Accepts word -> id with ids dense from 2; the reserved ids are added."""
        by_id = sorted(mapping.items(), key=lambda kv: kv[1])
        expected = list(range(2, 2 + len(by_id)))
        if [i for _, i in by_id] != expected:
            raise ValueError("word ids must be dense starting at 2")
        return cls((PAD_TOKEN, UNK_TOKEN, *(w for w, _ in by_id)))

    def to_list(self) -> List[str]:
        return list(self.tokens)


def tokenize(text: str, vocab: Vocab, max_len: int = DEFAULT_MAX_QUERY_LEN) -> List[int]:
    return [vocab.id_of(w) for w in split_words(text)[:max_len]]


class QueryRecord(BaseModel):
    """One text query bound to the item it describes."""
    model_config = ConfigDict(frozen=True)

    item_id: str = Field(min_length=1)
    text: str
    source: QuerySource = "original"
    query_id: Optional[str] = None

    @field_validator("text")
    @classmethod
    def _text_not_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("text is empty after trimming whitespace")
        return v


def parse_queries(lines: Iterable[str], path: Optional[str] = None) -> List[QueryRecord]:
    records: List[QueryRecord] = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(line_no, f"invalid JSON: {e.msg}", path)
        if not isinstance(obj, dict):
            raise ParseError(line_no, "expected a JSON object", path)
        obj.setdefault("query_id", f"line{line_no}")
        try:
            records.append(QueryRecord.model_validate(obj))
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(p) for p in first["loc"]) or "record"
            raise ParseError(line_no, f"{field}: {first['msg']}", path)
    return records


def load_queries(path: Union[str, Path]) -> List[QueryRecord]:
    """Reads a line-delimited query file in file order."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            records = parse_queries(f, str(path))
    except OSError as e:
        raise IoFailureError(f"cannot read {path}: {e}")
    logger.info("Loaded %d queries from %s", len(records), path)
    return records


def save_queries(queries: Sequence[QueryRecord], path: Union[str, Path]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            for q in queries:
                f.write(q.model_dump_json() + "\n")
    except OSError as e:
        raise IoFailureError(f"cannot write {path}: {e}")


def filter_queries(queries: Sequence[QueryRecord], source: SourceFilter = "all") -> List[QueryRecord]:
    """Keeps original captions, expansions, or both."""
    if source == "all":
        return list(queries)
    return [q for q in queries if q.source == source]


def split_heldout(queries: Sequence[QueryRecord], per_item: int) -> Tuple[List[QueryRecord], List[QueryRecord]]:
    """Holds out the last per_item queries of every item. Returns (train, heldout)."""
    if per_item <= 0:
        return list(queries), []
    by_item: Dict[str, List[int]] = {}
    for i, q in enumerate(queries):
        by_item.setdefault(q.item_id, []).append(i)
    held = {i for idx in by_item.values() for i in idx[-per_item:]}
    train = [q for i, q in enumerate(queries) if i not in held]
    heldout = [q for i, q in enumerate(queries) if i in held]
    return train, heldout


@dataclass(frozen=True)
class TrainingPair:
    query_tokens: Tuple[int, ...]
    target: SemId
    item_id: str = ""


class PairSet(NamedTuple):
    pairs: List[TrainingPair]
    skipped: int


def build_training_pairs(
    tree: SemTree,
    queries: Sequence[QueryRecord],
    vocab: Vocab,
    m: int = 0,
    max_len: int = DEFAULT_MAX_QUERY_LEN,
) -> PairSet:
    """Binds each query to its item's truncated SemId, in input order.

    Queries for items the tree does not index are skipped and counted.
    """
    pairs: List[TrainingPair] = []
    skipped = 0
    for q in queries:
        if q.item_id not in tree.leaf_of:
            skipped += 1
            continue
        pairs.append(TrainingPair(
            query_tokens=tuple(tokenize(q.text, vocab, max_len)),
            target=assign_semid(tree, q.item_id, m),
            item_id=q.item_id,
        ))
    if skipped:
        logger.warning("Skipped %d queries whose items are not indexed", skipped)
    if not pairs:
        raise NoValidPairsError("no query refers to an indexed item")
    return PairSet(pairs, skipped)
