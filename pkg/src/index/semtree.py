"""The semantic tree: recursive spherical k-means over item representations.

Every item lives in exactly one leaf. An item's SemId is the list of branch
labels walked from the root (written as the root symbol 0 followed by the
branch indices), optionally truncated by m trailing tokens so that
neighbouring leaves share one identifier.
"""
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, Iterable, List, Optional, Tuple

import numpy as np

from src.index.kmeans import spherical_kmeans
from src.store.embed_store import EmbeddingCorpus, ItemRecord, is_unit
from src.utils.errors import (
    CorruptTreeError,
    DuplicateItemIdError,
    EmptyInputError,
    InvalidSemIdError,
    IoFailureError,
    NonUnitInputError,
    TruncationTooDeepError,
    UnknownItemError,
)
from src.utils.log import get_logger

logger = get_logger(__name__)

TREE_FORMAT_VERSION = 1
ROOT_SYMBOL = 0


@dataclass(frozen=True, order=True)
class SemId:
    """Root symbol followed by branch labels, e.g. (0, 9, 21) rendered "0-9-21"."""
    tokens: Tuple[int, ...]

    def __post_init__(self):
        tokens = tuple(int(t) for t in self.tokens)
        if not tokens or tokens[0] != ROOT_SYMBOL:
            raise InvalidSemIdError(f"SemId must start with the root symbol 0, got {tokens}")
        if any(t < 0 for t in tokens):
            raise InvalidSemIdError(f"SemId tokens must be non-negative, got {tokens}")
        object.__setattr__(self, "tokens", tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __str__(self) -> str:
        return self.render()

    def render(self) -> str:
        return "-".join(str(t) for t in self.tokens)

    @classmethod
    def parse(cls, text: str) -> "SemId":
        try:
            return cls(tuple(int(part) for part in text.strip().split("-")))
        except ValueError:
            raise InvalidSemIdError(f"cannot parse SemId {text!r}")

    @property
    def labels(self) -> Tuple[int, ...]:
        """Branch labels after the root symbol."""
        return self.tokens[1:]

    def truncated(self, m: int) -> "SemId":
        if m < 0 or m >= len(self.tokens):
            raise TruncationTooDeepError(f"cannot drop {m} tokens from {self.render()}")
        return SemId(self.tokens[: len(self.tokens) - m])


@dataclass(eq=False)
class SemTreeNode:
    node_id: int
    depth: int
    centroid: np.ndarray
    children: List[int] = field(default_factory=list)
    members: List[str] = field(default_factory=list)
    stagnated: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(eq=False)
class SemTree:
    k: int
    c: int
    root: int
    nodes: Dict[int, SemTreeNode]
    build_seed: int
    leaf_of: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self._parent: Dict[int, Tuple[int, int]] = {}
        for node in self.nodes.values():
            for branch, child in enumerate(node.children):
                self._parent[child] = (node.node_id, branch)
        if not self.leaf_of:
            self.leaf_of = {m: n.node_id for n in self.nodes.values() for m in n.members}
        self._leaf_ids: Optional[List[int]] = None
        self._leaf_centroids: Optional[np.ndarray] = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SemTree):
            return NotImplemented
        return serialize_tree(self) == serialize_tree(other)

    __hash__ = None

    def __len__(self) -> int:
        return len(self.leaf_of)

    def leaves(self) -> List[int]:
        if self._leaf_ids is None:
            self._leaf_ids = sorted(n.node_id for n in self.nodes.values() if n.is_leaf)
        return self._leaf_ids

    def leaf_centroids(self) -> np.ndarray:
        """Leaf centroids stacked in ascending node_id order."""
        if self._leaf_centroids is None:
            self._leaf_centroids = np.stack([self.nodes[i].centroid for i in self.leaves()])
        return self._leaf_centroids

    def path_tokens(self, node_id: int) -> Tuple[int, ...]:
        labels = []
        while node_id in self._parent:
            node_id, branch = self._parent[node_id]
            labels.append(branch)
        return (ROOT_SYMBOL,) + tuple(reversed(labels))

    def walk(self, tokens: Iterable[int]) -> int:
        """Follows branch labels from the root and returns the node reached."""
        tokens = tuple(tokens)
        if not tokens or tokens[0] != ROOT_SYMBOL:
            raise InvalidSemIdError(f"path must start at the root symbol, got {tokens}")
        node = self.nodes[self.root]
        for label in tokens[1:]:
            if label >= len(node.children):
                raise InvalidSemIdError(f"no branch {label} under node {node.node_id}")
            node = self.nodes[node.children[label]]
        return node.node_id

    def max_depth(self) -> int:
        return max(self.nodes[i].depth for i in self.leaves())

    def min_leaf_depth(self) -> int:
        return min(self.nodes[i].depth for i in self.leaves())

    def clone(self) -> "SemTree":
        return deserialize_tree(serialize_tree(self))


def _mean_direction(x: np.ndarray) -> np.ndarray:
    total = x.sum(axis=0)
    norm = np.linalg.norm(total)
    return total / norm if norm > 0.0 else x[0].copy()


def _check_corpus(corpus: EmbeddingCorpus) -> None:
    if len(corpus) == 0:
        raise EmptyInputError("cannot build a tree over an empty corpus")
    corpus.check_unit()


def build_tree(corpus: EmbeddingCorpus, k: int = 30, c: int = 30, seed: int = 0) -> SemTree:
    """Recursively splits every node holding more than c items into up to k children.

    Nodes are expanded breadth-first and numbered in creation order. The
    k-means RNG for a node is seeded by (seed, depth, path), so the result
    does not depend on expansion order. Children are ordered by descending
    size, ties by their smallest item_id.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if c < 1:
        raise ValueError("c must be >= 1")
    _check_corpus(corpus)
    reps = corpus.matrix.astype(np.float64)
    ids = corpus.ids

    nodes = {0: SemTreeNode(node_id=0, depth=0, centroid=_mean_direction(reps))}
    queue: Deque[Tuple[int, np.ndarray, Tuple[int, ...]]] = deque([(0, np.arange(len(ids)), ())])
    next_id = 1
    while queue:
        node_id, idx, path = queue.popleft()
        node = nodes[node_id]
        if idx.shape[0] <= c:
            node.members = [ids[i] for i in idx]
            continue
        labels, centroids = spherical_kmeans(reps[idx], k, seed=(seed, node.depth, *path))
        groups = [idx[labels == j] for j in range(centroids.shape[0])]
        if len(groups) == 1:
            node.members = [ids[i] for i in idx]
            node.stagnated = True
            logger.warning("Node %d (%d items) cannot be split further; kept as an oversized leaf", node_id, idx.shape[0])
            continue
        order = sorted(range(len(groups)), key=lambda j: (-groups[j].shape[0], min(ids[i] for i in groups[j])))
        for branch, j in enumerate(order):
            nodes[next_id] = SemTreeNode(node_id=next_id, depth=node.depth + 1, centroid=centroids[j])
            node.children.append(next_id)
            queue.append((next_id, groups[j], path + (branch,)))
            next_id += 1

    tree = SemTree(k=k, c=c, root=0, nodes=nodes, build_seed=seed)
    logger.info("Built semantic tree: %s", tree_stats(tree))
    return tree


def build_flat_tree(corpus: EmbeddingCorpus, n_clusters: int, seed: int = 0) -> SemTree:
    """One level of spherical k-means; each cluster number is the identifier."""
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    _check_corpus(corpus)
    reps = corpus.matrix.astype(np.float64)
    ids = corpus.ids
    root = SemTreeNode(node_id=0, depth=0, centroid=_mean_direction(reps))
    nodes = {0: root}
    labels, centroids = spherical_kmeans(reps, n_clusters, seed=(seed, 0))
    groups = [np.flatnonzero(labels == j) for j in range(centroids.shape[0])]
    if len(groups) == 1:
        root.members = list(ids)
    else:
        order = sorted(range(len(groups)), key=lambda j: (-groups[j].shape[0], min(ids[i] for i in groups[j])))
        for node_id, j in enumerate(order, start=1):
            nodes[node_id] = SemTreeNode(node_id=node_id, depth=1, centroid=centroids[j],
                                         members=[ids[i] for i in groups[j]])
            root.children.append(node_id)
    largest = max(len(n.members) for n in nodes.values())
    tree = SemTree(k=max(n_clusters, 2), c=largest, root=0, nodes=nodes, build_seed=seed)
    logger.info("Built flat identifier tree: %s", tree_stats(tree))
    return tree


def assign_semid(tree: SemTree, item_id: str, m: int = 0) -> SemId:
    """The item's root-to-leaf path with the last m tokens dropped."""
    try:
        leaf = tree.leaf_of[item_id]
    except KeyError:
        raise UnknownItemError(f"item {item_id!r} is not indexed in the tree")
    path = tree.path_tokens(leaf)
    if m < 0 or m >= len(path):
        raise TruncationTooDeepError(f"m={m} is too deep for {item_id!r} (path length {len(path)})")
    return SemId(path[: len(path) - m])


def semid_groups(tree: SemTree, m: int = 0) -> Dict[SemId, List[str]]:
    """Truncated SemId -> member item_ids (sorted), for every leaf."""
    groups: Dict[SemId, List[str]] = {}
    for leaf in tree.leaves():
        path = tree.path_tokens(leaf)
        if m < 0 or m >= len(path):
            raise TruncationTooDeepError(f"m={m} is too deep for leaf {leaf} (path length {len(path)})")
        groups.setdefault(SemId(path[: len(path) - m]), []).extend(tree.nodes[leaf].members)
    return {sid: sorted(members) for sid, members in sorted(groups.items())}


def nearest_leaf(tree: SemTree, rep: np.ndarray) -> int:
    """Leaf whose centroid has the highest cosine with rep; ties go to the lowest node_id."""
    sims = tree.leaf_centroids() @ np.asarray(rep, dtype=np.float64)
    return tree.leaves()[int(np.argmax(sims))]


def insert_item(tree: SemTree, record: ItemRecord, m: int = 0) -> SemId:
    """Places an unseen item in its most similar leaf. Centroids are left untouched."""
    if record.item_id in tree.leaf_of:
        raise DuplicateItemIdError(f"item {record.item_id!r} is already indexed")
    if not is_unit(record.rep):
        raise NonUnitInputError(f"{record.item_id}: rep is not unit-normalized")
    leaf = nearest_leaf(tree, record.rep)
    path = tree.path_tokens(leaf)
    if m < 0 or m >= len(path):
        raise TruncationTooDeepError(f"m={m} is too deep for leaf {leaf} (path length {len(path)})")
    tree.nodes[leaf].members.append(record.item_id)
    tree.leaf_of[record.item_id] = leaf
    return SemId(path[: len(path) - m])


def tree_stats(tree: SemTree) -> Dict[str, Any]:
    sizes = [len(tree.nodes[i].members) for i in tree.leaves()]
    return {
        "items": len(tree.leaf_of),
        "nodes": len(tree.nodes),
        "leaves": len(sizes),
        "max_depth": tree.max_depth(),
        "min_leaf_depth": tree.min_leaf_depth(),
        "leaf_size_min": min(sizes),
        "leaf_size_mean": round(float(np.mean(sizes)), 2),
        "leaf_size_max": max(sizes),
        "stagnated_leaves": sum(tree.nodes[i].stagnated for i in tree.leaves()),
    }


# --- serialization ---

def serialize_tree(tree: SemTree) -> bytes:
    """Canonical JSON document; identical trees give identical bytes."""
    doc = {
        "version": TREE_FORMAT_VERSION,
        "k": tree.k,
        "c": tree.c,
        "root": tree.root,
        "build_seed": tree.build_seed,
        "nodes": [
            {
                "node_id": n.node_id,
                "depth": n.depth,
                "centroid": [float(v) for v in n.centroid],
                "children": list(n.children),
                "members": list(n.members),
                "stagnated": bool(n.stagnated),
            }
            for n in sorted(tree.nodes.values(), key=lambda n: n.node_id)
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _node_from_doc(raw: Dict[str, Any]) -> SemTreeNode:
    centroid = np.asarray(raw["centroid"], dtype=np.float64)
    if centroid.ndim != 1 or centroid.size == 0 or not np.all(np.isfinite(centroid)):
        raise CorruptTreeError(f"node {raw.get('node_id')}: malformed centroid")
    children = [int(c) for c in raw["children"]]
    members = [str(m) for m in raw["members"]]
    return SemTreeNode(
        node_id=int(raw["node_id"]),
        depth=int(raw["depth"]),
        centroid=centroid,
        children=children,
        members=members,
        stagnated=bool(raw["stagnated"]),
    )


def _validate(tree: SemTree) -> None:
    if tree.root not in tree.nodes:
        raise CorruptTreeError("root node is missing")
    seen_children = set()
    dims = {n.centroid.shape[0] for n in tree.nodes.values()}
    if len(dims) != 1:
        raise CorruptTreeError("centroids do not share one dim")
    members_total = 0
    for node in tree.nodes.values():
        if len(node.children) > tree.k:
            raise CorruptTreeError(f"node {node.node_id} has {len(node.children)} children, k is {tree.k}")
        if not is_unit(node.centroid):
            raise CorruptTreeError(f"node {node.node_id} has a non-unit centroid")
        if node.is_leaf and not node.members:
            raise CorruptTreeError(f"leaf {node.node_id} has no members")
        if node.children and node.members:
            raise CorruptTreeError(f"internal node {node.node_id} holds members")
        members_total += len(node.members)
        for child in node.children:
            if child not in tree.nodes or child in seen_children or child == tree.root:
                raise CorruptTreeError(f"node {node.node_id} has an invalid child {child}")
            if tree.nodes[child].depth != node.depth + 1:
                raise CorruptTreeError(f"node {child} has an inconsistent depth")
            seen_children.add(child)
    if len(seen_children) != len(tree.nodes) - 1:
        raise CorruptTreeError("some nodes are unreachable from the root")
    if members_total != len(tree.leaf_of):
        raise CorruptTreeError("an item appears in more than one leaf")


def deserialize_tree(data: bytes) -> SemTree:
    try:
        doc = json.loads(data.decode("utf-8"))
        if doc.get("version") != TREE_FORMAT_VERSION:
            raise CorruptTreeError(f"unsupported tree format version {doc.get('version')!r}")
        nodes = {}
        for raw in doc["nodes"]:
            node = _node_from_doc(raw)
            if node.node_id in nodes:
                raise CorruptTreeError(f"duplicate node_id {node.node_id}")
            nodes[node.node_id] = node
        tree = SemTree(
            k=int(doc["k"]),
            c=int(doc["c"]),
            root=int(doc["root"]),
            nodes=nodes,
            build_seed=int(doc["build_seed"]),
        )
    except CorruptTreeError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError, AttributeError, KeyError, TypeError, ValueError) as e:
        raise CorruptTreeError(f"cannot decode tree: {e}")
    _validate(tree)
    return tree


def tree_hash(tree: SemTree) -> str:
    return hashlib.sha256(serialize_tree(tree)).hexdigest()


def shape_hash(tree: SemTree) -> str:
    """Hash of the branching structure only; inserting items into leaves keeps it."""
    doc = {
        "k": tree.k,
        "root": tree.root,
        "children": [[n.node_id, list(n.children)] for n in sorted(tree.nodes.values(), key=lambda n: n.node_id)],
    }
    return hashlib.sha256(json.dumps(doc, separators=(",", ":")).encode("utf-8")).hexdigest()


def save_tree(tree: SemTree, path: str) -> None:
    try:
        with open(path, "wb") as f:
            f.write(serialize_tree(tree))
    except OSError as e:
        raise IoFailureError(f"cannot write {path}: {e}")
    logger.info("Saved tree (%d nodes) to %s", len(tree.nodes), path)


def load_tree(path: str) -> SemTree:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoFailureError(f"cannot read {path}: {e}")
    return deserialize_tree(data)
