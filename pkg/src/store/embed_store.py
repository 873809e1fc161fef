"""Item, frame and query embeddings: validation, pooling and persistence.

Vectors are held as 1-D ``float32`` arrays. Representations are unit
normalized at ingestion so that cosine similarity downstream is a plain
dot product.
"""
import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.errors import (
    BadMagicError,
    DimMismatchError,
    DuplicateItemIdError,
    EmptyFrameListError,
    EmptyInputError,
    IoFailureError,
    NonFiniteValueError,
    NonUnitInputError,
    ParseError,
    TruncatedFileError,
    UnknownItemError,
)
from src.utils.log import get_logger

logger = get_logger(__name__)

MAGIC = b"SGIX"
FORMAT_VERSION = 1
UNIT_TOL = 1e-5

CorpusFormat = Literal["binary", "lines"]
VectorLike = Union[np.ndarray, Sequence[float]]

_HEADER = struct.Struct("<4sHIQ")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")


def as_embedding(values: VectorLike, dim: Optional[int] = None) -> np.ndarray:
    """Coerces values to a finite 1-D float32 vector, optionally of a fixed dim."""
    vec = np.asarray(values, dtype=np.float32)
    if vec.ndim != 1 or vec.size == 0:
        raise DimMismatchError(f"expected a non-empty 1-D vector, got shape {vec.shape}")
    if dim is not None and vec.shape[0] != dim:
        raise DimMismatchError(f"expected dim {dim}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise NonFiniteValueError("vector contains NaN or Inf")
    return vec


def vector_norm(vec: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(vec, dtype=np.float64)))


def is_unit(vec: np.ndarray, tol: float = UNIT_TOL) -> bool:
    return abs(vector_norm(vec) - 1.0) <= tol


def normalize(vec: VectorLike) -> np.ndarray:
    """L2-normalizes in double precision and returns float32. Zero vectors are rejected."""
    v64 = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(v64)):
        raise NonFiniteValueError("vector contains NaN or Inf")
    norm = np.linalg.norm(v64)
    if norm == 0.0:
        raise NonFiniteValueError("zero vector has no direction and cannot be normalized")
    return (v64 / norm).astype(np.float32)


def pool_frames(frames: Union[np.ndarray, Sequence[VectorLike]]) -> np.ndarray:
    """Mean-pools frame vectors into one unit-normalized item representation."""
    if len(frames) == 0:
        raise EmptyFrameListError("cannot pool an empty frame list")
    rows = [np.asarray(f, dtype=np.float64) for f in frames]
    dim = rows[0].shape
    if any(r.ndim != 1 for r in rows) or any(r.shape != dim for r in rows):
        raise DimMismatchError("all frames must be 1-D vectors of one dim")
    stacked = np.stack(rows)
    if not np.all(np.isfinite(stacked)):
        raise NonFiniteValueError("frame contains NaN or Inf")
    # canonical row order keeps the sum bit-identical under any frame permutation
    order = np.lexsort(stacked.T[::-1])
    mean = stacked[order].sum(axis=0) / stacked.shape[0]
    return normalize(mean)


@dataclass(frozen=True, eq=False)
class ItemRecord:
    """One indexed item: its id, optional frame vectors and pooled representation."""
    item_id: str
    rep: np.ndarray
    frames: Optional[np.ndarray] = None

    def __post_init__(self):
        if not isinstance(self.item_id, str) or not self.item_id:
            raise ValueError("item_id must be a non-empty string")
        rep = as_embedding(self.rep)
        object.__setattr__(self, "rep", rep)
        if self.frames is not None:
            frames = np.asarray(self.frames, dtype=np.float32)
            if frames.size == 0:
                frames = None
            elif frames.ndim != 2 or frames.shape[1] != rep.shape[0]:
                raise DimMismatchError(
                    f"{self.item_id}: frames shape {frames.shape} does not match rep dim {rep.shape[0]}"
                )
            elif not np.all(np.isfinite(frames)):
                raise NonFiniteValueError(f"{self.item_id}: frame contains NaN or Inf")
            object.__setattr__(self, "frames", frames)

    @property
    def dim(self) -> int:
        return int(self.rep.shape[0])

    @property
    def frame_count(self) -> int:
        return 0 if self.frames is None else int(self.frames.shape[0])

    @classmethod
    def from_frames(cls, item_id: str, frames: Union[np.ndarray, Sequence[VectorLike]]) -> "ItemRecord":
        return cls(item_id=item_id, rep=pool_frames(frames), frames=np.asarray(frames, dtype=np.float32))

    @classmethod
    def from_vector(cls, item_id: str, values: VectorLike) -> "ItemRecord":
        return cls(item_id=item_id, rep=ingest_rep(values))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ItemRecord):
            return NotImplemented
        if self.item_id != other.item_id or self.rep.tobytes() != other.rep.tobytes():
            return False
        if self.frames is None or other.frames is None:
            return self.frames is None and other.frames is None
        return self.frames.shape == other.frames.shape and self.frames.tobytes() == other.frames.tobytes()

    __hash__ = None


def ingest_rep(values: VectorLike) -> np.ndarray:
    """Keeps an already-unit vector bit-for-bit, normalizes anything else."""
    vec = as_embedding(values)
    return vec if is_unit(vec) else normalize(vec)


@dataclass(frozen=True, eq=False)
class EmbeddingCorpus:
    """An ordered, immutable gallery of item records sharing one dim."""
    dim: int
    records: Tuple[ItemRecord, ...] = ()

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        seen = set()
        for rec in records:
            if rec.dim != self.dim:
                raise DimMismatchError(f"{rec.item_id}: dim {rec.dim} != corpus dim {self.dim}")
            if rec.item_id in seen:
                raise DuplicateItemIdError(f"duplicate item_id {rec.item_id!r}")
            seen.add(rec.item_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ItemRecord]:
        return iter(self.records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingCorpus):
            return NotImplemented
        return self.dim == other.dim and self.records == other.records

    __hash__ = None

    @cached_property
    def ids(self) -> List[str]:
        return [r.item_id for r in self.records]

    @cached_property
    def index_of(self) -> Dict[str, int]:
        return {r.item_id: i for i, r in enumerate(self.records)}

    @cached_property
    def matrix(self) -> np.ndarray:
        """Stacked representations, shape (n, dim)."""
        if not self.records:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([r.rep for r in self.records])

    def get(self, item_id: str) -> ItemRecord:
        try:
            return self.records[self.index_of[item_id]]
        except KeyError:
            raise UnknownItemError(f"item {item_id!r} is not in the corpus")

    def rep(self, item_id: str) -> np.ndarray:
        return self.get(item_id).rep

    def extended(self, records: Iterable[ItemRecord]) -> "EmbeddingCorpus":
        return EmbeddingCorpus(dim=self.dim, records=self.records + tuple(records))

    def subset(self, item_ids: Iterable[str]) -> "EmbeddingCorpus":
        return EmbeddingCorpus(dim=self.dim, records=tuple(self.get(i) for i in item_ids))

    def check_unit(self) -> None:
        for rec in self.records:
            if not is_unit(rec.rep):
                raise NonUnitInputError(f"{rec.item_id}: rep norm {vector_norm(rec.rep):.6f} is not unit")


# --- binary format ---

def encode_corpus(corpus: EmbeddingCorpus) -> bytes:
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, corpus.dim, len(corpus))]
    for rec in corpus.records:
        raw_id = rec.item_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise ValueError(f"item_id too long for the binary format: {rec.item_id[:32]}...")
        parts.append(_U16.pack(len(raw_id)))
        parts.append(raw_id)
        parts.append(_U32.pack(rec.frame_count))
        if rec.frames is not None:
            parts.append(rec.frames.astype(_F32).tobytes())
        parts.append(rec.rep.astype(_F32).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        end = self.pos + n
        if end > len(self.data):
            raise TruncatedFileError(
                f"file ends inside {what}: need {n} bytes at offset {self.pos}, {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def floats(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(count * 4, what), dtype=_F32).astype(np.float32)


def decode_corpus(data: bytes) -> EmbeddingCorpus:
    reader = _Reader(data)
    magic, version, dim, count = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise BadMagicError(f"not a corpus file (magic {bytes(magic)!r})")
    if version != FORMAT_VERSION:
        raise BadMagicError(f"unsupported corpus format version {version}")
    if dim == 0:
        raise DimMismatchError("corpus header declares dim 0")
    records: List[ItemRecord] = []
    seen = set()
    for n in range(count):
        (id_len,) = _U16.unpack(reader.take(2, f"record {n} id length"))
        try:
            item_id = bytes(reader.take(id_len, f"record {n} id")).decode("utf-8")
        except UnicodeDecodeError as e:
            raise BadMagicError(f"record {n}: item_id is not UTF-8 ({e})")
        if item_id in seen:
            raise DuplicateItemIdError(f"duplicate item_id {item_id!r}")
        seen.add(item_id)
        (frame_count,) = _U32.unpack(reader.take(4, f"record {n} frame count"))
        frames = None
        if frame_count:
            frames = reader.floats(frame_count * dim, f"record {n} frames").reshape(frame_count, dim)
        rep = reader.floats(dim, f"record {n} rep")
        if not np.all(np.isfinite(rep)):
            raise NonFiniteValueError(f"{item_id}: rep contains NaN or Inf")
        records.append(ItemRecord(item_id=item_id, rep=ingest_rep(rep), frames=frames))
    if reader.pos != len(reader.data):
        raise TruncatedFileError(f"{len(reader.data) - reader.pos} unexpected trailing bytes after {count} records")
    return EmbeddingCorpus(dim=dim, records=tuple(records))


# --- line-delimited format ---

def _record_from_line(obj: object, line_no: int) -> ItemRecord:
    if not isinstance(obj, dict):
        raise ParseError(line_no, "expected a JSON object")
    item_id = obj.get("item_id")
    if not isinstance(item_id, str) or not item_id:
        raise ParseError(line_no, "missing or empty item_id")
    frames = obj.get("frames")
    rep = obj.get("rep")
    if rep is None and not frames:
        raise ParseError(line_no, f"{item_id}: neither rep nor frames given")
    frame_arr = None
    if frames:
        frame_arr = np.asarray(frames, dtype=np.float32)
        if frame_arr.ndim != 2:
            raise DimMismatchError(f"{item_id}: frames must be a list of equal-length vectors")
    rep_vec = pool_frames(frame_arr) if rep is None else ingest_rep(rep)
    return ItemRecord(item_id=item_id, rep=rep_vec, frames=frame_arr)


def parse_corpus_lines(lines: Iterable[str]) -> EmbeddingCorpus:
    records: List[ItemRecord] = []
    seen = set()
    dim: Optional[int] = None
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(line_no, f"invalid JSON: {e.msg}")
        rec = _record_from_line(obj, line_no)
        if dim is None:
            dim = rec.dim
        elif rec.dim != dim:
            raise DimMismatchError(f"line {line_no}: {rec.item_id} has dim {rec.dim}, expected {dim}")
        if rec.item_id in seen:
            raise DuplicateItemIdError(f"duplicate item_id {rec.item_id!r} at line {line_no}")
        seen.add(rec.item_id)
        records.append(rec)
    if dim is None:
        raise EmptyInputError("line-delimited corpus has no records, dim is unknown")
    return EmbeddingCorpus(dim=dim, records=tuple(records))


def corpus_to_lines(corpus: EmbeddingCorpus) -> str:
    out = []
    for rec in corpus.records:
        obj = {"item_id": rec.item_id, "rep": [float(v) for v in rec.rep]}
        if rec.frames is not None:
            obj["frames"] = [[float(v) for v in row] for row in rec.frames]
        out.append(json.dumps(obj))
    return "".join(line + "\n" for line in out)


# --- file entry points ---

def load_corpus(path: Union[str, Path], fmt: CorpusFormat = "binary") -> EmbeddingCorpus:
    """Reads a corpus file; frame-only records get their rep by pooling."""
    try:
        if fmt == "binary":
            corpus = decode_corpus(Path(path).read_bytes())
        elif fmt == "lines":
            with open(path, "r", encoding="utf-8") as f:
                corpus = parse_corpus_lines(f)
        else:
            raise ValueError(f"unknown corpus format {fmt!r}")
    except ParseError as e:
        raise ParseError(e.line, e.reason, str(path))
    except OSError as e:
        raise IoFailureError(f"cannot read {path}: {e}")
    logger.info("Loaded %d records (dim %d) from %s", len(corpus), corpus.dim, path)
    return corpus


def save_corpus(corpus: EmbeddingCorpus, path: Union[str, Path], fmt: CorpusFormat = "binary") -> None:
    corpus.check_unit()
    payload = encode_corpus(corpus) if fmt == "binary" else corpus_to_lines(corpus).encode("utf-8")
    try:
        Path(path).write_bytes(payload)
    except OSError as e:
        raise IoFailureError(f"cannot write {path}: {e}")
    logger.info("Saved %d records (dim %d) to %s", len(corpus), corpus.dim, path)


def guess_format(path: Union[str, Path]) -> CorpusFormat:
    return "lines" if str(path).endswith((".jsonl", ".ndjson")) else "binary"
